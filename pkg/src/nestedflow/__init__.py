"""Normalizing flows with nested-dropout training.

Flows trained with a truncated-reconstruction penalty order their latent
dimensions by importance, recovering PCA-like structure from a generic
invertible model.  The package provides LU and QR linear flows, affine
coupling multi-scale flows, the nested-dropout objective, a tape-based
gradient engine, Adam training, a PCA baseline, and evaluation tools,
all on top of numpy.
"""

__version__ = "0.1.0"

from .autodiff import (GradientRecord, NonFiniteLossError, ParameterVector,
                       evaluate_with_gradient, finite_difference_gradient)
from .coupling import (AffineCouplingTransform, MultiScaleFlow,
                       build_multiscale_flow, depth_forward_order,
                       multiscale_depth_order)
from .datasets import (Dataset, gen_synthetic_gaussian, gen_toy_hierarchical,
                       load_dataset, save_dataset)
from .evaluation import (RunReport, avg_log_likelihood, bits_per_dim,
                         make_run_report, mse_curve, truncated_sample)
from .flows import (FlowModel, LULinearTransform, OffsetTransform,
                    QRLinearTransform, TransformResult, build_lu_flow,
                    build_qr_flow, flow_log_likelihood, flow_sample,
                    standard_normal_logpdf, transform_forward,
                    transform_inverse)
from .checkpoint import load_model, save_model
from .nested_dropout import (GeometricSchedule, NestedDropoutConfig,
                             combined_loss, identity_order, reconstruct,
                             reconstruction_error, reversed_order, sample_k,
                             sample_ks, truncate)
from .optim import (AdamState, TrainConfig, TrainTrace, adam_step, cosine_lr,
                    init_adam, train)
from .pca import PCAModel, pca_fit, pca_mse, pca_project

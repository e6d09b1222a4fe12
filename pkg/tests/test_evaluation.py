import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nestedflow.datasets import Dataset
from nestedflow.evaluation import (
    RunReport,
    avg_log_likelihood,
    bits_per_dim,
    deterministic_report_bytes,
    make_run_report,
    mse_curve,
    save_curve_csv,
    save_report,
    truncated_sample,
)
from nestedflow.flows import FlowModel, OffsetTransform, build_qr_flow
from nestedflow.nested_dropout import identity_order, reversed_order


def identity_model(dim=3):
    return FlowModel(dim, [OffsetTransform(dim)], np.zeros(dim))


def test_avg_log_likelihood_at_origin():
    ll = avg_log_likelihood(identity_model(), np.zeros((1, 3)))
    assert ll == pytest.approx(-2.756815599614018, abs=1e-12)


def test_avg_log_likelihood_averages():
    m = identity_model(1)
    x = np.array([[0.0], [2.0]])
    want = 0.5 * (-0.9189385332046727 + (-0.9189385332046727 - 2.0))
    assert avg_log_likelihood(m, x) == pytest.approx(want, abs=1e-12)


def test_avg_log_likelihood_rejects_empty():
    with pytest.raises(ValueError):
        avg_log_likelihood(identity_model(), np.zeros((0, 3)))


def test_bits_per_dim_conversions():
    assert bits_per_dim(0.0, 4) == 0.0
    assert bits_per_dim(-3.0 * math.log(2.0), 3) == pytest.approx(1.0,
                                                                  abs=1e-15)
    assert bits_per_dim(-2.756815599614018, 3) == pytest.approx(
        1.3257480647361595, abs=1e-12)
    with pytest.raises(ValueError):
        bits_per_dim(1.0, 0)


def test_mse_curve_identity_flow_closed_form():
    m = identity_model()
    x = np.array([[1.0, 2.0, 3.0]])
    assert_allclose(mse_curve(m, x, identity_order(3)),
                    [13.0 / 3.0, 3.0, 0.0], atol=1e-15)
    assert_allclose(mse_curve(m, x, reversed_order(3)),
                    [5.0 / 3.0, 1.0 / 3.0, 0.0], atol=1e-15)


def test_mse_curve_full_rank_vanishes_for_invertible_models():
    rng = np.random.default_rng(0)
    m = build_qr_flow(3, rng)
    m.set_params(m.params.values + 0.2 * rng.standard_normal(m.n_params))
    x = rng.standard_normal((40, 3))
    curve = mse_curve(m, x, identity_order(3))
    assert curve[-1] <= 1e-10
    assert np.all(curve >= 0.0)


def test_mse_curve_rejects_empty():
    with pytest.raises(ValueError):
        mse_curve(identity_model(), np.zeros((0, 3)), identity_order(3))


def test_truncated_sample_zeroes_dropped_coordinates():
    m = identity_model()
    draw = truncated_sample(m, 1, identity_order(3), np.random.default_rng(1))
    assert draw.shape == (3,)
    assert draw[0] != 0.0
    assert draw[1] == 0.0 and draw[2] == 0.0


def test_truncated_sample_is_seeded():
    m = identity_model()
    a = truncated_sample(m, 2, identity_order(3), np.random.default_rng(2))
    b = truncated_sample(m, 2, identity_order(3), np.random.default_rng(2))
    assert_array_equal(a, b)


def single_point_data():
    return Dataset(points=np.array([[1.0, 2.0, 3.0]]), split={"test": (0, 1)})


def test_make_run_report_fields():
    m = identity_model()
    r = make_run_report(m, single_point_data(), identity_order(3),
                        config_hash="abc", seed=7,
                        extra_orders={"reversed": reversed_order(3)},
                        wall_clock={"train": 1.5}, notes={"mode": "demo"})
    assert r.config_hash == "abc"
    assert r.seed == 7
    assert r.drop_order.tolist() == [0, 1, 2]
    assert_allclose(r.mse_curve, [13.0 / 3.0, 3.0, 0.0], atol=1e-15)
    assert r.curves["reversed"]["order"] == [2, 1, 0]
    assert r.curves["reversed"]["mse"][0] == pytest.approx(5.0 / 3.0)
    assert r.test_bpd == pytest.approx(bits_per_dim(r.test_ll_nats, 3))
    assert r.wall_clock == {"train": 1.5}


def test_run_report_validation():
    good = dict(test_ll_nats=-1.0, test_bpd=0.5,
                mse_curve=np.array([1.0, 0.0]),
                drop_order=np.array([0, 1]), config_hash="", seed=None)
    RunReport(**good)
    with pytest.raises(ValueError):
        RunReport(**{**good, "test_ll_nats": np.nan})
    with pytest.raises(ValueError):
        RunReport(**{**good, "mse_curve": np.array([np.inf, 0.0])})
    with pytest.raises(ValueError):
        # a visibly nonzero full-rank error means the model is not invertible
        RunReport(**{**good, "mse_curve": np.array([1.0, 0.5])})


def test_report_json_sections(tmp_path):
    m = identity_model()
    r = make_run_report(m, single_point_data(), identity_order(3),
                        config_hash="h", seed=0, wall_clock={"train": 2.0})
    path = tmp_path / "report.json"
    save_report(r, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"results", "timing"}
    assert doc["timing"] == {"train": 2.0}
    assert doc["results"]["test_ll_nats"] == r.test_ll_nats
    assert doc["results"]["drop_order"] == [0, 1, 2]


def test_timing_excluded_from_deterministic_bytes(tmp_path):
    m = identity_model()
    shared = dict(config_hash="h", seed=0)
    fast = make_run_report(m, single_point_data(), identity_order(3),
                           wall_clock={"train": 0.1}, **shared)
    slow = make_run_report(m, single_point_data(), identity_order(3),
                           wall_clock={"train": 99.0}, **shared)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_report(fast, p1)
    save_report(slow, p2)
    assert p1.read_bytes() != p2.read_bytes()
    assert deterministic_report_bytes(p1) == deterministic_report_bytes(p2)


def test_curve_csv_layout(tmp_path):
    path = tmp_path / "curve.csv"
    save_curve_csv(path, np.array([0.25, 0.0]))
    assert path.read_text() == "k,mse\n1,0.25\n2,0\n"

import math

import numpy as np
import pytest

from gatedrnn.exceptions import OracleError, ParameterError
from gatedrnn.gradcheck import (GradReport, check_model_gradients, compare_gradients,
                                finite_diff, random_case, relative_error, run_suite)
from gatedrnn.model import bptt


def test_finite_diff_examples():
    assert finite_diff(lambda p: float(p[0] ** 2), np.array([3.0]))[0] == pytest.approx(6, abs=1e-8)
    np.testing.assert_array_equal(finite_diff(lambda p: 4.0, {"a": np.ones(3)})["a"], 0)
    g = finite_diff(lambda p: math.sin(p[0]), np.array([1.0]))
    assert g[0] == pytest.approx(math.cos(1.0), abs=1e-9)
    assert g[0] == pytest.approx(0.540302, abs=1e-6)


def test_finite_diff_restores_params_and_rejects_bad_input():
    p = {"w": np.array([0.1, 0.2, 0.3])}
    before = p["w"].copy()
    finite_diff(lambda q: float(np.sum(q["w"] ** 3)), p)
    np.testing.assert_array_equal(p["w"], before)
    with pytest.raises(ParameterError):
        finite_diff(lambda q: 0.0, p, 0.0)
    with pytest.raises(OracleError), np.errstate(invalid="ignore", divide="ignore"):
        finite_diff(lambda q: float(np.log(q[0])), np.array([0.0]))


def test_relative_error_examples():
    assert relative_error(2.5, 2.5) == 0
    assert relative_error(0.0, 0.0) == 0
    assert relative_error(1.0, 1.00001) == pytest.approx(1e-5, rel=1e-4)
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)


def test_report_passed():
    rep = compare_gradients({"a": np.array([1.0, 2.0])}, {"a": np.array([1.0, 2.0])})
    assert rep.passed() and rep.num_checked == 2 and rep.max_rel_error == 0
    with pytest.raises(ParameterError):
        compare_gradients({}, {})


@pytest.mark.parametrize("kind,variant", [("tanh", "-"), ("lstm", "-"), ("gru", "candidate"),
                                          ("gru", "projection")])
@pytest.mark.parametrize("head_kind", ["bernoulli", "gmm"])
def test_random_model_passes(kind, variant, head_kind):
    model, item = random_case(123, kind, head_kind, variant)
    assert model.n <= 8 and model.d_in <= 5 and len(item) <= 6
    rep = check_model_gradients(model, item)
    assert rep.passed(1e-5), str(rep)


def test_fault_injection_is_located():
    model, item = random_case(7, "lstm", "gmm")
    grads, _ = bptt(model, item)
    name = "cell.U_f"
    idx = int(np.argmax(np.abs(grads[name]).ravel()))
    grads[name].reshape(-1)[idx] *= 1.1
    rep = check_model_gradients(model, item, analytic=grads)
    assert rep.worst_parameter == (name, idx)
    assert rep.max_rel_error == pytest.approx(0.1 / 1.1, rel=1e-3)
    assert not rep.passed()


def test_epsilon_sweep_is_v_shaped():
    # plain float64 oracle: truncation error dominates at large eps, roundoff at small eps
    model, item = random_case(3, "gru", "bernoulli")
    errs = {eps: check_model_gradients(model, item, eps, oracle_dtype=np.float64).max_rel_error
            for eps in (1e-2, 1e-5, 1e-10)}
    assert errs[1e-5] < errs[1e-2] and errs[1e-5] < errs[1e-10]


def test_suite_listing():
    reports = run_suite(seeds=1, head_kinds=("bernoulli",))
    assert [key[:3] for key, _ in reports] == [
        ("tanh", "-", "bernoulli"), ("lstm", "-", "bernoulli"),
        ("gru", "candidate", "bernoulli"), ("gru", "projection", "bernoulli")]
    assert all(isinstance(rep, GradReport) and rep.passed() for _, rep in reports)

"""Registry and plumbing of the finite-difference verification suite.

The full suite (including the end-to-end paths) runs once in the acceptance
tests; here we exercise the cheap ops and the registry contract.
"""

import pytest

from voxray.verify import CHECKS, GRAD_TOL, CheckResult, run_check, run_suite

FAST_OPS = ["add", "mul", "div", "matmul", "sigmoid", "softplus", "leaky_relu",
            "clamp01", "concat", "transpose", "composite_from_alpha"]


def test_registry_names_cover_the_engine():
    expected = {"add", "sub", "mul", "div", "neg", "exp", "log", "sigmoid",
                "softplus", "leaky_relu", "absolute", "clamp01", "matmul",
                "sum", "sum_axis", "mean", "concat", "narrow", "reshape",
                "transpose", "conv2d_stride1", "conv2d_stride2",
                "upsample_bilinear2x", "avg_downsample2x", "trilinear_sample",
                "composite", "composite_from_alpha", "bce_with_logits",
                "path_encoder_to_mse", "path_full_objective"}
    assert expected <= set(CHECKS)


@pytest.mark.parametrize("name", FAST_OPS)
def test_fast_ops_pass(name):
    result = run_check(name, n_instances=5)
    assert isinstance(result, CheckResult)
    assert result.passed, f"{name}: {result.max_error}"
    assert result.instances == 5


def test_results_are_deterministic():
    a = run_check("conv2d_stride1", n_instances=3)
    b = run_check("conv2d_stride1", n_instances=3)
    assert a.max_error == b.max_error


def test_unknown_check_rejected():
    with pytest.raises(ValueError, match="unknown check"):
        run_check("quaternions")


def test_module_filter():
    results = run_suite(module="conv2d", n_instances=2)
    assert {r.name for r in results} == {"conv2d_stride1", "conv2d_stride2"}
    with pytest.raises(ValueError, match="no checks match"):
        run_suite(module="zzz")


def test_pass_threshold_is_the_contract_tolerance():
    result = run_check("add", n_instances=2)
    assert result.max_error < GRAD_TOL
    assert CheckResult("x", GRAD_TOL, 1, 0.0).passed is False
    assert CheckResult("x", GRAD_TOL / 2, 1, 0.0).passed is True

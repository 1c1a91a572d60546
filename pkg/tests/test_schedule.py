import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from restain.errors import ConfigurationError, NumericError
from restain.schedule import (
    NoiseSchedule,
    ddim_inverse_step,
    ddim_reverse_step,
    ddim_step,
    make_linear_schedule,
)

# Cumulative products of the linear-beta schedule computed independently with
# 50-digit decimal arithmetic.
ABAR_T100_DECIMAL = {
    1: 0.9999,
    50: 0.77718008266117947019445088728053765819762933070591,
    100: 0.36356324805549191544721959985992858942315739785075,
}


def test_linear_schedule_matches_decimal_product():
    sched = make_linear_schedule(100)
    assert float(sched.alpha_bar[0]) == 1.0
    for t, expected in ABAR_T100_DECIMAL.items():
        assert float(sched.alpha_bar[t]) == pytest.approx(expected, rel=1e-13)


def test_linear_schedule_shape_and_monotonicity():
    sched = make_linear_schedule(37)
    ab = sched.alpha_bar
    assert ab.shape == (38,)
    assert ab.dtype == torch.float64
    assert float(ab[0]) == 1.0
    assert (ab[1:] < ab[:-1]).all()
    assert (ab > 0).all() and (ab <= 1).all()
    assert sched.total_steps == 37
    assert [sched.model_timestep(t) for t in (0, 1, 37)] == [0, 1, 37]


def test_single_step_schedule_is_allowed():
    sched = make_linear_schedule(1, beta_min=0.1, beta_max=0.3)
    assert sched.total_steps == 1
    assert float(sched.alpha_bar[1]) == pytest.approx(0.9)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"total_steps": 0},
        {"total_steps": -3},
        {"total_steps": 10, "beta_min": 0.0},
        {"total_steps": 10, "beta_min": 0.5, "beta_max": 0.2},
        {"total_steps": 10, "beta_min": 1e-4, "beta_max": 1.0},
    ],
)
def test_make_linear_schedule_rejects_bad_arguments(kwargs):
    with pytest.raises(ConfigurationError):
        make_linear_schedule(**kwargs)


@pytest.mark.parametrize(
    "alpha_bar",
    [
        [1.0],  # too short
        [0.9, 0.5],  # does not start at 1
        [1.0, 0.5, 0.5],  # not strictly decreasing
        [1.0, 0.5, 0.7],  # increasing tail
        [1.0, 0.5, -0.1],  # out of range
        [1.0, 0.5, float("nan")],
    ],
)
def test_noise_schedule_rejects_invalid_alpha_bar(alpha_bar):
    with pytest.raises(ConfigurationError):
        NoiseSchedule(alpha_bar=torch.tensor(alpha_bar, dtype=torch.float64))


def test_noise_schedule_rejects_mismatched_model_timesteps():
    with pytest.raises(ConfigurationError):
        NoiseSchedule(alpha_bar=torch.tensor([1.0, 0.5, 0.25]), model_timesteps=(0, 1))


def test_ddim_step_scalar_oracle():
    # x=1, eps=0.1, abar 0.5 -> 0.4, high-precision decimal reference.
    x = torch.tensor([1.0], dtype=torch.float64)
    eps = torch.tensor([0.1], dtype=torch.float64)
    out = ddim_step(x, eps, 0.5, 0.4)
    assert float(out) == pytest.approx(0.90864130472069663, rel=1e-14)


def test_equal_alpha_step_is_bitwise_identity():
    g = torch.Generator().manual_seed(5)
    x = torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64)
    eps = 1e6 * torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64)
    out = ddim_step(x, eps, 0.37, 0.37)
    assert torch.equal(out, x)
    assert out.data_ptr() != x.data_ptr()  # a view would alias the input


def test_equal_alpha_step_keeps_gradient_path():
    x = torch.zeros(1, 2, requires_grad=True)
    out = ddim_step(x, torch.ones(1, 2), 0.5, 0.5)
    out.sum().backward()
    assert torch.equal(x.grad, torch.ones(1, 2))


def test_reverse_then_inverse_is_identity_with_shared_eps():
    sched = make_linear_schedule(10)
    g = torch.Generator().manual_seed(0)
    x = torch.randn(1, 3, 6, 6, generator=g, dtype=torch.float64)
    eps = torch.randn(1, 3, 6, 6, generator=g, dtype=torch.float64)
    for t in range(1, 11):
        down = ddim_reverse_step(x, eps, t, sched)
        back = ddim_inverse_step(down, eps, t - 1, sched)
        assert torch.allclose(back, x, rtol=1e-12, atol=1e-12)


def test_constant_predictor_roundtrip_machine_precision():
    # With a state-independent noise prediction the inversion loop and the
    # sampling loop are exact algebraic inverses of each other.
    sched = make_linear_schedule(20)
    g = torch.Generator().manual_seed(3)
    x0 = torch.randn(2, 3, 8, 8, generator=g, dtype=torch.float64)
    eps = 0.7 * torch.ones_like(x0)
    x = x0
    for t in range(0, 20):
        x = ddim_inverse_step(x, eps, t, sched)
    for t in range(20, 0, -1):
        x = ddim_reverse_step(x, eps, t, sched)
    rel = float((x - x0).abs().max() / x0.abs().max())
    assert rel <= 1e-10


@settings(max_examples=40, deadline=None)
@given(
    a_from=st.floats(0.05, 1.0),
    a_to=st.floats(0.05, 1.0),
    scale=st.floats(-2.0, 2.0),
)
def test_ddim_step_is_linear_in_state_and_eps(a_from, a_to, scale):
    g = torch.Generator().manual_seed(17)
    x1 = torch.randn(1, 4, generator=g, dtype=torch.float64)
    x2 = torch.randn(1, 4, generator=g, dtype=torch.float64)
    e1 = torch.randn(1, 4, generator=g, dtype=torch.float64)
    e2 = torch.randn(1, 4, generator=g, dtype=torch.float64)
    lhs = ddim_step(x1 + scale * x2, e1 + scale * e2, a_from, a_to)
    rhs = ddim_step(x1, e1, a_from, a_to) + scale * ddim_step(x2, e2, a_from, a_to)
    assert torch.allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(t=st.integers(1, 15))
def test_single_step_roundtrip_property(t):
    sched = make_linear_schedule(15)
    g = torch.Generator().manual_seed(t)
    x = torch.randn(1, 3, 4, 4, generator=g, dtype=torch.float64)
    eps = torch.randn(1, 3, 4, 4, generator=g, dtype=torch.float64)
    up = ddim_inverse_step(x, eps, t - 1, sched)
    down = ddim_reverse_step(up, eps, t, sched)
    assert torch.allclose(down, x, rtol=1e-11, atol=1e-11)


def test_step_rejects_shape_mismatch_and_bad_range():
    sched = make_linear_schedule(5)
    x = torch.zeros(1, 3, 4, 4)
    with pytest.raises(ValueError):
        ddim_reverse_step(x, torch.zeros(1, 3, 4, 5), 1, sched)
    with pytest.raises(ValueError):
        ddim_reverse_step(x, torch.zeros_like(x), 0, sched)
    with pytest.raises(ValueError):
        ddim_reverse_step(x, torch.zeros_like(x), 6, sched)
    with pytest.raises(ValueError):
        ddim_inverse_step(x, torch.zeros_like(x), 5, sched)
    with pytest.raises(ValueError):
        ddim_inverse_step(x, torch.zeros_like(x), -1, sched)


def test_step_rejects_non_finite_inputs():
    sched = make_linear_schedule(5)
    x = torch.zeros(1, 3, 4, 4)
    bad = torch.full_like(x, float("nan"))
    with pytest.raises(NumericError):
        ddim_reverse_step(bad, torch.zeros_like(x), 1, sched)
    with pytest.raises(NumericError):
        ddim_reverse_step(x, bad, 1, sched)


def test_subsample_selects_linspace_indices():
    sched = make_linear_schedule(100)
    sub = sched.subsample(10)
    assert sub.total_steps == 10
    expected_idx = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
    assert list(sub.model_timesteps) == expected_idx
    for j, i in enumerate(expected_idx):
        assert float(sub.alpha_bar[j]) == float(sched.alpha_bar[i])


def test_subsample_identity_and_validation():
    sched = make_linear_schedule(20)
    assert sched.subsample(20) is sched
    with pytest.raises(ConfigurationError):
        sched.subsample(0)
    with pytest.raises(ConfigurationError):
        sched.subsample(21)


def test_subsample_composes_model_timesteps():
    sub = make_linear_schedule(100).subsample(50).subsample(10)
    assert list(sub.model_timesteps) == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]


def test_fingerprint_tracks_values():
    a = make_linear_schedule(10)
    b = make_linear_schedule(10)
    c = make_linear_schedule(10, beta_max=0.019)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freeinsert import LatentGrid, NoiseSchedule, add_noise, ddim_invert, ddim_sample, ddim_step
from freeinsert.backends import ConditioningSet, ZeroDenoiser, toy_backend
from freeinsert.compositing import DepthMap
from freeinsert.errors import ContractError, TimestepError


def grid(values):
    return LatentGrid(values=np.asarray(values, dtype=np.float64))


@pytest.fixture
def sched():
    return NoiseSchedule.default(10)


class TestAddNoise:
    def test_t0_returns_z0_exactly(self, sched, rng):
        z0 = grid(rng.standard_normal((2, 4, 4)))
        eps = grid(rng.standard_normal((2, 4, 4)))
        out = add_noise(z0, 0, eps, sched)
        np.testing.assert_array_equal(out.values, z0.values)

    def test_zero_noise_scales_signal(self, sched, rng):
        z0 = grid(rng.standard_normal((2, 4, 4)))
        eps = grid(np.zeros((2, 4, 4)))
        out = add_noise(z0, 5, eps, sched)
        np.testing.assert_allclose(out.values, math.sqrt(sched.at(5)) * z0.values, rtol=1e-12)

    def test_hand_evaluated_quarter_alpha(self):
        # scalar check: sqrt(0.25)*1 + sqrt(0.75)*1 = 0.5 + 0.8660254... = 1.3660254
        sched = NoiseSchedule(alpha_bar=np.array([1.0, 0.25]))
        z0 = grid(np.ones((1, 2, 2)))
        eps = grid(np.ones((1, 2, 2)))
        out = add_noise(z0, 1, eps, sched)
        np.testing.assert_allclose(out.values, np.full((1, 2, 2), 1.3660254037844386), atol=1e-12)

    def test_shape_mismatch_rejected(self, sched):
        with pytest.raises(ContractError):
            add_noise(grid(np.zeros((1, 2, 2))), 1, grid(np.zeros((1, 3, 3))), sched)

    def test_t_out_of_range(self, sched):
        z = grid(np.zeros((1, 2, 2)))
        with pytest.raises(TimestepError):
            add_noise(z, 11, z, sched)

    @settings(max_examples=25, deadline=None)
    @given(exponent=st.integers(-4, 4), t=st.integers(0, 10))
    def test_linearity_exact_for_exponent_scales(self, exponent, t):
        # scaling by powers of two only shifts exponents, so the elementwise
        # identity add_noise(a*z0, t, a*eps) == a*add_noise(z0, t, eps) holds
        # bit-exactly
        scale = float(2.0**exponent)
        sched = NoiseSchedule.default(10)
        r = np.random.default_rng(1)
        z0 = grid(r.standard_normal((2, 3, 3)))
        eps = grid(r.standard_normal((2, 3, 3)))
        lhs = add_noise(grid(scale * z0.values), t, grid(scale * eps.values), sched)
        rhs = scale * add_noise(z0, t, eps, sched).values
        np.testing.assert_array_equal(lhs.values, rhs)

    @settings(max_examples=25, deadline=None)
    @given(scale=st.floats(-3, 3, allow_nan=False), t=st.integers(0, 10))
    def test_linearity_general_scales(self, scale, t):
        sched = NoiseSchedule.default(10)
        r = np.random.default_rng(1)
        z0 = grid(r.standard_normal((2, 3, 3)))
        eps = grid(r.standard_normal((2, 3, 3)))
        lhs = add_noise(grid(scale * z0.values), t, grid(scale * eps.values), sched)
        rhs = scale * add_noise(z0, t, eps, sched).values
        # a few ulps of slack: cancellation between the signal and noise terms
        # amplifies the relative error of the two rounding orders
        np.testing.assert_allclose(lhs.values, rhs, rtol=1e-12, atol=1e-15)


class TestDdimStep:
    def test_zero_eps_is_pure_rescale(self, sched, rng):
        z = grid(rng.standard_normal((2, 4, 4)))
        out = ddim_step(z, grid(np.zeros((2, 4, 4))), 7, 3, sched)
        expect = z.values * math.sqrt(sched.at(3) / sched.at(7))
        np.testing.assert_allclose(out.values, expect, rtol=1e-12)

    def test_exact_denoise_with_true_noise(self, sched, rng):
        z0 = grid(rng.standard_normal((2, 4, 4)))
        eps = grid(rng.standard_normal((2, 4, 4)))
        z_t = add_noise(z0, 6, eps, sched)
        out = ddim_step(z_t, eps, 6, 0, sched)
        np.testing.assert_allclose(out.values, z0.values, atol=1e-12)

    def test_deterministic_bit_identical(self, sched, rng):
        z = grid(rng.standard_normal((2, 4, 4)))
        eps = grid(rng.standard_normal((2, 4, 4)))
        a = ddim_step(z, eps, 5, 2, sched)
        b = ddim_step(z, eps, 5, 2, sched)
        np.testing.assert_array_equal(a.values, b.values)

    def test_requires_decreasing_steps(self, sched, rng):
        z = grid(rng.standard_normal((2, 4, 4)))
        with pytest.raises(TimestepError):
            ddim_step(z, z, 3, 5, sched)
        with pytest.raises(TimestepError):
            ddim_step(z, z, 3, 3, sched)


class TestInversion:
    def test_zero_backend_inversion_is_rescaling(self, cond, rng):
        sched = NoiseSchedule.default(10)
        z0 = grid(rng.standard_normal((3, 64, 64)) * 0.3)
        traj = ddim_invert(z0, ZeroDenoiser(), cond, sched)
        for t in (0, 3, 10):
            np.testing.assert_allclose(
                traj[t].values, math.sqrt(sched.at(t)) * z0.values, atol=1e-12
            )

    def test_round_trip_toy_backend(self, cond, schedule50):
        be = toy_backend(seed=3, latent_shape=(3, 64, 64))
        z0 = grid(np.random.default_rng(11).standard_normal((3, 64, 64)) * 0.4)
        traj = ddim_invert(z0, be, cond, schedule50)
        recon = ddim_sample(traj[50], be, cond, schedule50)
        assert np.max(np.abs(recon.values - z0.values)) < 1e-4

    def test_round_trip_lower_mode_is_worse(self, cond, schedule50):
        # the naive single-evaluation inversion drifts; that gap is why the
        # solver mode is the default
        be = toy_backend(seed=3, latent_shape=(3, 64, 64))
        z0 = grid(np.random.default_rng(11).standard_normal((3, 64, 64)) * 0.4)
        naive = ddim_invert(z0, be, cond, schedule50, eps_reference="lower")
        recon = ddim_sample(naive[50], be, cond, schedule50)
        solved = ddim_invert(z0, be, cond, schedule50)
        recon_solved = ddim_sample(solved[50], be, cond, schedule50)
        err_naive = np.max(np.abs(recon.values - z0.values))
        err_solved = np.max(np.abs(recon_solved.values - z0.values))
        assert err_solved < err_naive

    def test_trajectory_endpoints_and_shape(self, cond, rng):
        sched = NoiseSchedule.default(5)
        be = toy_backend(seed=2, latent_shape=(3, 64, 64))
        z0 = grid(rng.standard_normal((3, 64, 64)) * 0.2)
        traj = ddim_invert(z0, be, cond, sched)
        assert traj.num_steps == 5
        np.testing.assert_array_equal(traj[0].values, z0.values)
        assert all(z.shape == z0.shape for z in traj.latents)

    def test_fingerprint_changes_with_prompt(self, flat_depth, rng):
        sched = NoiseSchedule.default(3)
        be = ZeroDenoiser()
        z0 = grid(rng.standard_normal((1, 4, 4)))
        c1 = ConditioningSet(prompt_text="a photo of a dog", depth=flat_depth)
        c2 = ConditioningSet(prompt_text="a photo of a cat", depth=flat_depth)
        t1 = ddim_invert(z0, be, c1, sched)
        t2 = ddim_invert(z0, be, c2, sched)
        assert t1.conditioning_fingerprint != t2.conditioning_fingerprint

    def test_unknown_mode_rejected(self, cond, rng):
        sched = NoiseSchedule.default(3)
        z0 = grid(rng.standard_normal((1, 4, 4)))
        with pytest.raises(ContractError):
            ddim_invert(z0, ZeroDenoiser(), cond, sched, eps_reference="upper")

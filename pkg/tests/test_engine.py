import numpy as np
import pytest

from freeinsert import (
    LatentGrid,
    MaskGrid,
    NoiseSchedule,
    Placement,
    apply_injection,
    noise_blend,
    run_controllable_generation,
    toy_backend,
)
from freeinsert.backends import FeatureBundle, IdentityVae
from freeinsert.conditioning import PatchEmbedder
from freeinsert.engine import InjectionConfig, _threshold
from freeinsert.errors import ConfigError, ContractError

from conftest import make_render, make_request


def full_catalog_inj(backend, **taus):
    return InjectionConfig.for_backend(backend, **taus)


def mask_of(latent_shape, value):
    h, w = latent_shape[1:]
    return MaskGrid(
        pixel_mask=np.full((h, w), value, dtype=bool),
        latent_mask=np.full((1, h, w), value, dtype=bool),
    )


class TestApplyInjection:
    @pytest.fixture
    def captured(self, toy64, cond, rng):
        z = LatentGrid(values=rng.standard_normal((3, 64, 64)))
        _, bundle = toy64.predict(z, 50, cond)
        return bundle

    def test_first_step_injects_everything(self, captured, toy64):
        inj = full_catalog_inj(toy64, tau_f=0.2, tau_q=0.5, tau_k=0.5)
        out = apply_injection(captured, 50, inj, 50)
        assert set(out.spatial) == {"spatial.0", "spatial.1"}
        assert set(out.queries) == {"attn.0", "attn.1"}
        assert set(out.keys) == {"attn.0", "attn.1"}

    def test_last_step_injects_nothing(self, captured, toy64):
        inj = full_catalog_inj(toy64, tau_f=0.2, tau_q=0.5, tau_k=0.5)
        out = apply_injection(captured, 1, inj, 50)
        assert out.is_empty()

    def test_query_boundary_strict(self, captured, toy64):
        inj = full_catalog_inj(toy64, tau_q=0.5)
        at_26 = apply_injection(captured, 26, inj, 50)
        at_25 = apply_injection(captured, 25, inj, 50)
        assert at_26.queries and not at_25.queries

    def test_tau_one_never_injects(self, captured, toy64):
        inj = full_catalog_inj(toy64, tau_f=1.0, tau_q=1.0, tau_k=1.0)
        for t in (1, 25, 50):
            assert apply_injection(captured, t, inj, 50).is_empty()

    def test_missing_layer_named(self, toy64):
        inj = full_catalog_inj(toy64)
        empty = FeatureBundle(timestep=50)
        with pytest.raises(ContractError, match="spatial.0"):
            apply_injection(empty, 50, inj, 50)

    def test_bad_tau_rejected(self):
        with pytest.raises(ConfigError):
            InjectionConfig(tau_f=1.5)

    def test_threshold_rounds_half_up(self):
        assert _threshold(0.5, 50) == 25
        assert _threshold(0.2, 50) == 10
        assert _threshold(0.25, 50) == 13  # 12.5 rounds up
        assert _threshold(0.0, 50) == 0
        assert _threshold(1.0, 50) == 50


class TestNoiseBlend:
    @pytest.fixture
    def sched(self):
        return NoiseSchedule.default(10)

    def test_all_ones_mask_returns_z_g_bit_exact(self, sched, rng):
        z_g = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        z_bg = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        out = noise_blend(z_g, z_bg, 5, mask_of((3, 8, 8), True), sched, rng=rng)
        np.testing.assert_array_equal(out.values, z_g.values)

    def test_all_zeros_mask_t0_returns_bg_exact(self, sched, rng):
        z_g = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        z_bg = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        out = noise_blend(z_g, z_bg, 0, mask_of((3, 8, 8), False), sched, rng=rng)
        np.testing.assert_array_equal(out.values, z_bg.values)

    def test_single_masked_cell(self, sched, rng):
        z_g = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        z_bg = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        m = mask_of((3, 8, 8), False)
        m.latent_mask[0, 3, 4] = True
        out = noise_blend(z_g, z_bg, 0, m, sched, rng=rng)
        diff = out.values != z_bg.values
        assert diff[:, 3, 4].all()
        diff[:, 3, 4] = False
        assert not diff.any()

    def test_unmasked_matches_forward_noising_exactly(self, sched, rng):
        from freeinsert import add_noise

        z_g = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        z_bg = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        eps = rng.standard_normal((3, 8, 8))
        out = noise_blend(z_g, z_bg, 4, mask_of((3, 8, 8), False), sched, eps=eps)
        expect = add_noise(z_bg, 4, z_bg.with_values(eps), sched)
        np.testing.assert_array_equal(out.values, expect.values)

    def test_shape_mismatch_rejected(self, sched, rng):
        z_g = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        z_bg = LatentGrid(values=rng.standard_normal((3, 4, 4)))
        with pytest.raises(ContractError):
            noise_blend(z_g, z_bg, 0, mask_of((3, 8, 8), True), sched, rng=rng)

    def test_needs_noise_source(self, sched, rng):
        z = LatentGrid(values=rng.standard_normal((3, 8, 8)))
        with pytest.raises(ContractError):
            noise_blend(z, z, 3, mask_of((3, 8, 8), False), sched)


def run(req, schedule, seed=5, **kwargs):
    be = toy_backend(seed=seed, latent_shape=(3, *req.background.shape[:2]))
    defaults = dict(
        content_extractor=PatchEmbedder(),
        style_extractor=PatchEmbedder(),
    )
    defaults.update(kwargs)
    return run_controllable_generation(req, be, IdentityVae(), schedule, **defaults)


class TestEngineRuns:
    def test_all_ones_mask_regenerates_coarse(self, bg64, object_image, schedule8):
        # opaque full-canvas render -> mask everywhere; with injection off and
        # Branch2 conditioned exactly like the inversion, the loop is a plain
        # DDIM regeneration of I_coarse
        render = make_render(size=64, opaque_box=(0, 64))
        req = make_request(
            bg64, object_image, render,
            placement=Placement(x=0, y=0),
            tau_f=1.0, tau_q=1.0, tau_k=1.0,
            guidance=1.0,
            use_style_embedding=False,
        )
        from freeinsert import paste

        coarse, _ = paste(render, bg64, req.placement, dilate_radius=req.dilate_radius, latent_scale_factor=1)
        res = run(req, schedule8)
        assert res.mask.latent_mask.all()
        assert np.max(np.abs(res.image - coarse)) < 1e-5

    def test_all_zeros_mask_returns_background(self, bg64, object_image, transparent_render, schedule8):
        req = make_request(bg64, object_image, transparent_render)
        res = run(req, schedule8, keep_latent_trace=True)
        assert not res.mask.latent_mask.any()
        np.testing.assert_array_equal(res.image, bg64)
        # the latent trace outside the (empty) mask follows the background
        # noising trajectory exactly at every step
        from freeinsert import add_noise

        z_bg = IdentityVae().encode(bg64)
        for i, t in enumerate(range(schedule8.num_steps, 0, -1)):
            eps = res.noise_trace[i]
            if t - 1 == 0:
                expect = z_bg.values
            else:
                expect = add_noise(z_bg, t - 1, z_bg.with_values(eps), schedule8).values
            np.testing.assert_array_equal(res.latent_trace[i], expect)

    def test_injection_log_matches_closed_form(self, basic_request, schedule50):
        res = run(basic_request, schedule50)
        spatial_steps = {e["t"] for e in res.injection_log if e["spatial"]}
        q_steps = {e["t"] for e in res.injection_log if e["queries"]}
        k_steps = {e["t"] for e in res.injection_log if e["keys"]}
        assert spatial_steps == set(range(11, 51))
        assert q_steps == set(range(26, 51))
        assert k_steps == set(range(26, 51))
        assert [e["t"] for e in res.injection_log] == list(range(50, 0, -1))

    def test_background_preserved_outside_mask(self, basic_request, schedule8, bg64):
        res = run(basic_request, schedule8)
        z_bg = IdentityVae().encode(bg64)
        outside = ~np.broadcast_to(res.mask.latent_mask, res.final_latent.shape)
        np.testing.assert_array_equal(res.final_latent.values[outside], z_bg.values[outside])
        pm = res.mask.latent_mask[0]
        assert np.max(np.abs(res.image - bg64)[~pm]) == 0.0

    def test_per_step_background_preservation(self, basic_request, schedule8, bg64):
        from freeinsert import add_noise

        res = run(basic_request, schedule8, keep_latent_trace=True)
        z_bg = IdentityVae().encode(bg64)
        outside = ~np.broadcast_to(res.mask.latent_mask, z_bg.shape)
        for i, t in enumerate(range(schedule8.num_steps, 0, -1)):
            eps = res.noise_trace[i]
            if t - 1 == 0:
                expect = z_bg.values
            else:
                expect = add_noise(z_bg, t - 1, z_bg.with_values(eps), schedule8).values
            np.testing.assert_array_equal(res.latent_trace[i][outside], expect[outside])

    def test_seed_reproducibility_bit_identical(self, basic_request, schedule8):
        a = run(basic_request, schedule8)
        b = run(basic_request, schedule8)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.final_latent.values, b.final_latent.values)
        assert a.injection_log == b.injection_log

    def test_branch_isolation_under_no_injection(self, bg64, object_image, render16, schedule8):
        # with injection fully disabled, Branch2's output must not depend on
        # the content embedding (which only Branch1 sees)
        base = dict(tau_f=1.0, tau_q=1.0, tau_k=1.0)
        req = make_request(bg64, object_image, render16, **base)
        a = run(req, schedule8, content_extractor=PatchEmbedder(seed=1))
        b = run(req, schedule8, content_extractor=PatchEmbedder(seed=2))
        c = run(req, schedule8, content_extractor=None)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.image, c.image)

    def test_injection_changes_output(self, bg64, object_image, render16, schedule8):
        req_on = make_request(bg64, object_image, render16)
        req_off = make_request(bg64, object_image, render16, tau_f=1.0, tau_q=1.0, tau_k=1.0)
        a = run(req_on, schedule8)
        b = run(req_off, schedule8)
        assert not np.array_equal(a.image, b.image)

    def test_style_schedule_gate_matches_disabled_style(self, bg64, object_image, render16, schedule8):
        req_gated = make_request(bg64, object_image, render16, style_active_range=(0.0, 0.0))
        req_off = make_request(bg64, object_image, render16, use_style_embedding=False)
        a = run(req_gated, schedule8)
        b = run(req_off, schedule8)
        np.testing.assert_array_equal(a.image, b.image)

    def test_style_embedding_changes_output(self, bg64, object_image, render16, schedule8):
        req = make_request(bg64, object_image, render16)
        a = run(req, schedule8, style_extractor=PatchEmbedder(seed=1))
        b = run(req, schedule8, style_extractor=None)
        assert not np.array_equal(a.image, b.image)

    def test_free_branch1_mode_runs(self, bg64, object_image, render16, schedule8):
        req = make_request(bg64, object_image, render16, branch1_mode="free")
        res = run(req, schedule8)
        assert len(res.injection_log) == schedule8.num_steps

    def test_unknown_layer_in_injection_config(self, basic_request, schedule8):
        be = toy_backend(seed=5, latent_shape=(3, 64, 64))
        inj = InjectionConfig(spatial_layers=("nope",))
        with pytest.raises(ConfigError, match="nope"):
            run_controllable_generation(basic_request, be, IdentityVae(), schedule8, inj)

    def test_template_prompt_fallback_used(self, bg64, object_image, render16, schedule8):
        req = make_request(bg64, object_image, render16, prompt=None, object_tag="mug")
        res = run(req, schedule8)
        assert res.prompt.source == "template"
        assert res.prompt.text == "a photo of a mug"
        assert res.metadata["prompt_text"] == "a photo of a mug"

    def test_metadata_echoes_knobs(self, basic_request, schedule8):
        res = run(basic_request, schedule8)
        knobs = res.metadata["knobs"]
        assert knobs["tau_f"] == basic_request.tau_f
        assert knobs["seed"] == basic_request.seed
        assert res.metadata["num_steps"] == schedule8.num_steps


class TestBackendFailureContext:
    def test_failure_carries_timestep_and_branch(self, basic_request, schedule8):
        from freeinsert.backends.toy import ToyDenoiser
        from freeinsert.errors import BackendError

        class Flaky(ToyDenoiser):
            def predict(self, z, t, cond, overrides=None):
                if t == 3 and overrides is not None:
                    raise RuntimeError("synthetic fault")
                return super().predict(z, t, cond, overrides)

        be = Flaky(seed=5, latent_shape=(3, 64, 64))
        with pytest.raises(BackendError) as exc_info:
            run_controllable_generation(
                basic_request, be, IdentityVae(), schedule8,
                content_extractor=PatchEmbedder(), style_extractor=PatchEmbedder(),
            )
        assert exc_info.value.timestep == 3
        assert exc_info.value.branch == "branch2"


class DownsampleVae(IdentityVae):
    """Lossy stride-2 codec standing in for a real VAE (exercises padding)."""

    scale_factor = 2
    round_trip_bound = 0.25

    def encode(self, image):
        z = super().encode(image).values
        c, h, w = z.shape
        pooled = z.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
        return LatentGrid(values=pooled)

    def decode(self, z):
        up = np.repeat(np.repeat(z.values, 2, axis=1), 2, axis=2)
        return super().decode(LatentGrid(values=up))


class TestStridedVae:
    def test_non_divisible_canvas_pads_and_crops(self, object_image, schedule8):
        r = np.random.default_rng(13)
        bg = r.uniform(0.2, 0.8, (67, 70, 3))
        req = make_request(bg, object_image, make_render(), placement=Placement(x=24, y=24))
        be = toy_backend(seed=5, latent_shape=(3, 34, 35))
        res = run_controllable_generation(
            req, be, DownsampleVae(), schedule8,
            content_extractor=PatchEmbedder(), style_extractor=PatchEmbedder(),
        )
        assert res.image.shape == bg.shape
        assert res.final_latent.shape == (3, 34, 35)
        assert res.mask.latent_mask.shape == (1, 34, 35)
        # unmasked pixels stay within the codec's round-trip bound
        up = np.repeat(np.repeat(res.mask.latent_mask[0], 2, axis=0), 2, axis=1)[:67, :70]
        err = np.mean(np.abs(res.image - bg)[~up])
        assert err <= DownsampleVae.round_trip_bound

    def test_latent_mask_conservative_at_stride(self, object_image, schedule8, bg64):
        req = make_request(bg64, object_image, make_render())
        be = toy_backend(seed=5, latent_shape=(3, 32, 32))
        res = run_controllable_generation(
            req, be, DownsampleVae(), schedule8,
            content_extractor=PatchEmbedder(), style_extractor=PatchEmbedder(),
        )
        up = np.repeat(np.repeat(res.mask.latent_mask[0], 2, axis=0), 2, axis=1)
        assert np.all(up[res.mask.pixel_mask])

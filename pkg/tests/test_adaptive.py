"""Selection thresholding, the axis-choice rule table and the upscaling
step."""

import numpy as np
import pytest

from conftest import make_scene
from texsplat.adaptive import (
    AdaptiveConfig,
    apply_adaptive_step,
    select_candidates,
    upscale_decision,
)
from texsplat.rasterizer import GradientStats


def oracle_decision(sx, sy, k_a, k_s):
    """Rule table written out independently of the implementation."""
    if sx / sy > k_a and sy < k_s:
        return (True, False)
    if sy / sx > k_a and sx < k_s:
        return (False, True)
    return (True, True)


class TestSelection:
    def test_strictly_above_threshold(self):
        cfg = AdaptiveConfig()
        stats = GradientStats(
            accum_abs_grad=np.array([0.0, 1.9e-5, 2.0e-5, 2.1e-5, 4.0e-5]),
            pixel_count=np.array([1, 1, 1, 1, 2]),
        )
        # mean per pixel: 0, 1.9e-5, exactly k_G, 2.1e-5, exactly k_G
        assert select_candidates(stats, cfg) == [3]

    def test_count_normalization(self):
        cfg = AdaptiveConfig()
        stats = GradientStats(
            accum_abs_grad=np.array([1e-3, 1e-3]),
            pixel_count=np.array([10, 100_000_000]),
        )
        assert select_candidates(stats, cfg) == [0]

    def test_zero_count_safe(self):
        cfg = AdaptiveConfig()
        stats = GradientStats(
            accum_abs_grad=np.array([0.0]), pixel_count=np.array([0])
        )
        assert select_candidates(stats, cfg) == []


class TestRuleTable:
    def test_exhaustive_grid_matches_oracle(self):
        cfg = AdaptiveConfig()
        values = [1e-4, 1e-3, 5e-3, 9e-3, 0.01, 0.011, 0.02, 0.05, 0.1,
                  0.5, 1.0, 5.0]
        for sx in values:
            for sy in values:
                dec = upscale_decision((sx, sy), cfg)
                assert (dec.double_u, dec.double_v) == oracle_decision(
                    sx, sy, cfg.k_a, cfg.k_s
                ), (sx, sy)

    def test_boundaries_are_strict(self):
        cfg = AdaptiveConfig()
        # ratio exactly k_A: not elongated enough -> both axes
        dec = upscale_decision((4.0 * 0.005, 0.005), cfg)
        assert (dec.double_u, dec.double_v) == (True, True)
        # short axis exactly k_S: not thin enough -> both axes
        dec = upscale_decision((0.05, 0.01), cfg)
        assert (dec.double_u, dec.double_v) == (True, True)
        # strictly past both thresholds -> long axis only
        dec = upscale_decision((0.05, 0.009), cfg)
        assert (dec.double_u, dec.double_v) == (True, False)
        dec = upscale_decision((0.009, 0.05), cfg)
        assert (dec.double_u, dec.double_v) == (False, True)

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            upscale_decision((0.0, 0.1), AdaptiveConfig())


class TestReachableSet:
    def test_two_events_from_unit(self):
        """All (width, height) reachable after two upscale events starting
        at 1x1 with cap 4."""
        cfg = AdaptiveConfig(max_dim=4)
        # At each scheduled event a splat is either skipped or doubled
        # along one or both axes.
        decisions = [None, (True, False), (False, True), (True, True)]
        from texsplat.texture import Texture, upscale

        reachable = set()
        for d1 in decisions:
            for d2 in decisions:
                t = Texture.constant()
                for d in (d1, d2):
                    if d is not None:
                        t, _ = upscale(t, *d, cap=cfg.max_dim)
                reachable.add((t.width, t.height))
        assert reachable == {(w, h) for w in (1, 2, 4) for h in (1, 2, 4)}


class TestApplyAdaptiveStep:
    def _stats(self, n, hot):
        stats = GradientStats.zeros(n)
        stats.pixel_count[:] = 1
        for i in hot:
            stats.accum_abs_grad[i] = 1.0
            stats.pixel_count[i] = 1
        return stats

    def test_upscales_candidates_and_rebuilds(self, rng):
        scene = make_scene(rng, 5, 0)
        scene.scale[:] = 0.2  # isotropic: both axes double
        before = [
            (int(scene.textures.widths[i]), int(scene.textures.heights[i]))
            for i in range(5)
        ]
        before_tex = [scene.textures.get(i) for i in range(5)]
        cfg = AdaptiveConfig(max_dim=8)
        stats = self._stats(5, hot=[1, 3])
        scene, events = apply_adaptive_step(scene, stats, cfg, iteration=500)
        assert {e["id"] for e in events} == {1, 3}
        for i in range(5):
            w, h = int(scene.textures.widths[i]), int(scene.textures.heights[i])
            if i in (1, 3):
                assert (w, h) == (before[i][0] * 2, before[i][1] * 2)
            else:
                assert (w, h) == before[i]
                np.testing.assert_array_equal(
                    scene.textures.get(i).rgb, before_tex[i].rgb
                )

    def test_stats_reset_after_step(self, rng):
        scene = make_scene(rng, 3, 0)
        cfg = AdaptiveConfig()
        stats = self._stats(3, hot=[0])
        apply_adaptive_step(scene, stats, cfg, iteration=500)
        assert np.all(stats.accum_abs_grad == 0)
        assert np.all(stats.pixel_count == 0)

    def test_capped_event_reported(self, rng):
        scene = make_scene(rng, 2, 0)
        scene.scale[:] = 0.2
        # force texture 0 to the cap already
        from texsplat.texture import Texture, atlas_rebuild

        scene.textures = atlas_rebuild(
            [Texture.constant(width=4, height=4), Texture.constant()]
        )
        cfg = AdaptiveConfig(max_dim=4)
        stats = self._stats(2, hot=[0])
        scene, events = apply_adaptive_step(scene, stats, cfg, iteration=1000)
        assert len(events) == 1
        assert events[0]["reason"] == "capped"
        assert events[0]["old"] == events[0]["new"] == (4, 4)

    def test_event_log_format(self, rng, tmp_path):
        scene = make_scene(rng, 2, 0)
        scene.scale[:] = 0.2
        from texsplat.texture import Texture, atlas_rebuild

        scene.textures = atlas_rebuild(
            [Texture.constant(), Texture.constant()]
        )
        log = tmp_path / "events.log"
        cfg = AdaptiveConfig()
        stats = self._stats(2, hot=[1])
        apply_adaptive_step(scene, stats, cfg, iteration=500, log_path=log)
        lines = log.read_text(encoding="utf-8").splitlines()
        assert lines == ["iter=500 id=1 old=1x1 new=2x2 reason=both"]

    def test_anisotropic_reason_codes(self, rng):
        scene = make_scene(rng, 2, 0)
        from texsplat.texture import Texture, atlas_rebuild

        scene.textures = atlas_rebuild(
            [Texture.constant(), Texture.constant()]
        )
        scene.scale[0] = (0.05, 0.009)  # long in u
        scene.scale[1] = (0.009, 0.05)  # long in v
        cfg = AdaptiveConfig()
        stats = self._stats(2, hot=[0, 1])
        scene, events = apply_adaptive_step(scene, stats, cfg, iteration=500)
        by_id = {e["id"]: e for e in events}
        assert by_id[0]["reason"] == "u" and by_id[0]["new"] == (2, 1)
        assert by_id[1]["reason"] == "v" and by_id[1]["new"] == (1, 2)

    def test_no_candidates_no_change(self, rng):
        scene = make_scene(rng, 3, 0)
        texels_before = scene.textures.texels.copy()
        stats = GradientStats.zeros(3)
        scene, events = apply_adaptive_step(
            scene, stats, AdaptiveConfig(), iteration=500
        )
        assert events == []
        np.testing.assert_array_equal(scene.textures.texels, texels_before)


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            AdaptiveConfig(k_a=0.0)
        with pytest.raises(ValueError):
            AdaptiveConfig(cadence=0)
        with pytest.raises(ValueError):
            AdaptiveConfig(max_dim=3)

"""Scene container, SH evaluation and scene/checkpoint serialization."""

import numpy as np
import pytest

from texsplat.model import (
    SH_OFFSET,
    Scene,
    eval_sh,
    init_scene,
    logit,
    sh_basis,
    sh_basis_grad,
    sigmoid,
)
from texsplat.sceneio import (
    SceneFormatError,
    load_checkpoint,
    load_scene,
    save_checkpoint,
    save_scene,
)
from texsplat.texture import Texture, atlas_rebuild


def oracle_sh_basis(d):
    """Real SH basis written out independently, bands 0..3."""
    x, y, z = d
    pi = np.pi
    return np.array([
        0.5 * np.sqrt(1 / pi),
        -np.sqrt(3 / (4 * pi)) * y,
        np.sqrt(3 / (4 * pi)) * z,
        -np.sqrt(3 / (4 * pi)) * x,
        0.5 * np.sqrt(15 / pi) * x * y,
        -0.5 * np.sqrt(15 / pi) * y * z,
        0.25 * np.sqrt(5 / pi) * (3 * z * z - 1),
        -0.5 * np.sqrt(15 / pi) * x * z,
        0.25 * np.sqrt(15 / pi) * (x * x - y * y),
        -0.25 * np.sqrt(35 / (2 * pi)) * y * (3 * x * x - y * y),
        0.5 * np.sqrt(105 / pi) * x * y * z,
        -0.25 * np.sqrt(21 / (2 * pi)) * y * (5 * z * z - 1),
        0.25 * np.sqrt(7 / pi) * z * (5 * z * z - 3),
        -0.25 * np.sqrt(21 / (2 * pi)) * x * (5 * z * z - 1),
        0.25 * np.sqrt(105 / pi) * z * (x * x - y * y),
        -0.25 * np.sqrt(35 / (2 * pi)) * x * (x * x - 3 * y * y),
    ])


class TestShBasis:
    def test_matches_independent_formula_table(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            got = sh_basis(d)
            ref = oracle_sh_basis(d)
            np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        g = sh_basis_grad(d)
        h = 1e-6
        for axis in range(3):
            dp, dm = d.copy(), d.copy()
            dp[axis] += h
            dm[axis] -= h
            fd = (sh_basis(dp) - sh_basis(dm)) / (2 * h)
            np.testing.assert_allclose(g[:, axis], fd, atol=1e-8)

    def test_eval_sh_degree0_is_offset_plus_dc(self):
        coeffs = np.array([[0.1, 0.2, 0.3]])
        d = np.array([0.0, 0.0, 1.0])
        got = eval_sh(coeffs, d)
        ref = coeffs[0] * oracle_sh_basis(d)[0] + SH_OFFSET
        np.testing.assert_allclose(got, ref)

    def test_eval_sh_unclamped(self):
        coeffs = np.array([[-10.0, 10.0, 0.0]])
        got = eval_sh(coeffs, (0, 0, 1.0))
        assert got[0] < 0 and got[1] > 1


class TestSigmoid:
    def test_logit_roundtrip(self):
        for p in (0.01, 0.1, 0.5, 0.9, 0.99):
            assert abs(sigmoid(logit(p)) - p) < 1e-12


class TestInitScene:
    def test_deterministic_per_seed(self):
        a = init_scene(20, ((-1, -1, -1), (1, 1, 1)), 42, 2)
        b = init_scene(20, ((-1, -1, -1), (1, 1, 1)), 42, 2)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.rot, b.rot)
        c = init_scene(20, ((-1, -1, -1), (1, 1, 1)), 43, 2)
        assert not np.array_equal(a.mu, c.mu)

    def test_shapes_and_ranges(self):
        s = init_scene(10, ((-2, -1, 0), (2, 1, 3)), 7, 1,
                       scale_range=(0.1, 0.2))
        assert s.mu.shape == (10, 3)
        assert s.sh.shape == (10, 4, 3)
        assert np.all(s.mu[:, 0] >= -2) and np.all(s.mu[:, 0] <= 2)
        assert np.all(s.mu[:, 2] >= 0) and np.all(s.mu[:, 2] <= 3)
        assert np.all(s.scale >= 0.1 - 1e-6) and np.all(s.scale <= 0.2 + 1e-6)
        np.testing.assert_allclose(np.linalg.norm(s.rot, axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(sigmoid(s.opacity_logit), 0.1, atol=1e-6)
        assert np.all(s.sh == 0)

    def test_blank_unit_textures(self):
        s = init_scene(5, ((-1, -1, -1), (1, 1, 1)), 0, 0)
        for i in range(5):
            t = s.texture(i)
            assert (t.width, t.height) == (1, 1)
            assert np.all(t.rgb == 0)
            assert np.all(t.alpha == 1)

    def test_rejects_zero_count(self):
        with pytest.raises(ValueError):
            init_scene(0, ((-1, -1, -1), (1, 1, 1)), 0, 0)


class TestScene:
    def test_gaussian_view_copies(self):
        s = init_scene(3, ((-1, -1, -1), (1, 1, 1)), 5, 0)
        g = s.gaussian(1)
        g.mu[0] = 99.0
        assert s.mu[1, 0] != 99.0

    def test_atlas_length_checked(self):
        s = init_scene(3, ((-1, -1, -1), (1, 1, 1)), 5, 0)
        with pytest.raises(ValueError):
            Scene(
                mu=s.mu, scale=s.scale, rot=s.rot,
                opacity_logit=s.opacity_logit, sh=s.sh,
                textures=atlas_rebuild([Texture.constant()]),
                sh_degree=0,
            )


class TestSceneIo:
    def _scene(self, seed=3, count=7, degree=2):
        s = init_scene(count, ((-1, -1, -1), (1, 1, 1)), seed, degree,
                       background=np.array([0.1, 0.2, 0.3],
                                           dtype=np.float32).astype(np.float64))
        # Mixed texture sizes to exercise the atlas section.
        texs = [Texture.constant(width=w, height=h)
                for (w, h) in [(1, 1), (2, 1), (1, 2), (2, 2), (4, 4),
                               (4, 2), (2, 4)][:count]]
        rng = np.random.default_rng(seed)
        for t in texs:
            t.rgb[:] = np.asarray(
                rng.normal(size=t.rgb.shape), dtype=np.float32
            ).astype(np.float64)
            t.alpha[:] = np.asarray(
                rng.uniform(0, 1, size=t.alpha.shape), dtype=np.float32
            ).astype(np.float64)
        s.textures = atlas_rebuild(texs)
        return s

    def test_roundtrip_bit_identical(self, tmp_path):
        s = self._scene()
        path = tmp_path / "scene.bin"
        save_scene(s, path)
        r = load_scene(path)
        np.testing.assert_array_equal(r.mu, s.mu)
        np.testing.assert_array_equal(r.scale, s.scale)
        np.testing.assert_array_equal(r.rot, s.rot)
        np.testing.assert_array_equal(r.opacity_logit, s.opacity_logit)
        np.testing.assert_array_equal(r.sh, s.sh)
        np.testing.assert_array_equal(r.background, s.background)
        np.testing.assert_array_equal(r.textures.texels, s.textures.texels)
        np.testing.assert_array_equal(r.textures.offsets, s.textures.offsets)
        np.testing.assert_array_equal(r.textures.widths, s.textures.widths)
        assert r.sh_degree == s.sh_degree

    def test_save_is_deterministic(self, tmp_path):
        s = self._scene()
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_scene(s, p1)
        save_scene(s, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        s = self._scene()
        path = tmp_path / "scene.bin"
        save_scene(s, path)
        data = bytearray(path.read_bytes())
        data[0] = ord("X")
        path.write_bytes(bytes(data))
        with pytest.raises(SceneFormatError, match="magic"):
            load_scene(path)

    def test_truncation_names_section(self, tmp_path):
        s = self._scene()
        path = tmp_path / "scene.bin"
        save_scene(s, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(SceneFormatError, match="section"):
            load_scene(path)

    def test_trailing_data_rejected(self, tmp_path):
        s = self._scene()
        path = tmp_path / "scene.bin"
        save_scene(s, path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(SceneFormatError, match="trailing"):
            load_scene(path)

    def test_checkpoint_roundtrip(self, tmp_path):
        s = self._scene()
        rng = np.random.default_rng(0)
        moments = {
            "mu": (rng.normal(size=s.mu.shape), rng.random(s.mu.shape)),
            "opacity": (rng.normal(size=s.n), rng.random(s.n)),
        }
        path = tmp_path / "ckpt.bin"
        save_checkpoint(path, s, moments=moments, iteration=123, stage=2,
                        rng_state="rng-blob")
        r, m, it, stage, rs = load_checkpoint(path)
        assert (it, stage, rs) == (123, 2, "rng-blob")
        np.testing.assert_array_equal(r.mu, s.mu)
        for name in moments:
            np.testing.assert_array_equal(m[name][0], moments[name][0])
            np.testing.assert_array_equal(m[name][1], moments[name][1])

    def test_plain_scene_loads_as_checkpoint(self, tmp_path):
        s = self._scene()
        path = tmp_path / "scene.bin"
        save_scene(s, path)
        r, m, it, stage, rs = load_checkpoint(path)
        assert m == {} and it == 0 and rs is None

    def test_init_scene_roundtrips_exactly(self, tmp_path):
        """Initialization rounds through float32, so the float32 file is
        lossless for fresh scenes."""
        s = init_scene(50, ((-1, -1, -1), (1, 1, 1)), 9, 3)
        path = tmp_path / "scene.bin"
        save_scene(s, path)
        r = load_scene(path)
        np.testing.assert_array_equal(r.mu, s.mu)
        np.testing.assert_array_equal(r.scale, s.scale)
        np.testing.assert_array_equal(r.rot, s.rot)

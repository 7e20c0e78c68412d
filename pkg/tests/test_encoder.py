"""Field encoder: grids, ray sampling, fused compositing, low-res rendering."""

import math

import numpy as np
import pytest

from voxray import autodiff as ad
from voxray.autodiff import Tape, Tensor, grad_check
from voxray.encoder import (
    EncoderOutput,
    FieldEncoder,
    VoxelGrid,
    composite,
    composite_from_alpha,
    patch_rays,
    positional_encoding,
    sample_ray,
)
from voxray.scene import Camera, PatchSpec, spherical_pose


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def composite_primitives(sigma, values, delta):
    """Same computation assembled from exp / matmul-prefix-sum primitives."""
    r, n = sigma.shape
    prefix = np.triu(np.ones((n, n + 1), dtype=sigma.dtype), 1)
    x = ad.mul(sigma, Tensor(delta, dtype=sigma.dtype))
    c = ad.matmul(x, Tensor(prefix))
    transmit = ad.exp(ad.neg(c))
    alpha = ad.sub(1.0, ad.exp(ad.neg(x)))
    w = ad.mul(ad.narrow(transmit, 1, 0, n), alpha)
    out = ad.tsum(ad.mul(ad.reshape(w, (r, n, 1)), values), axis=1)
    resid = ad.narrow(transmit, 1, n, 1)
    return out, resid


class TestComposite:
    def test_two_half_alpha_samples_hand_values(self):
        """alpha = (0.5, 0.5): weights (0.5, 0.25), residual 0.25."""
        alpha = np.array([[0.5, 0.5]])
        basis = Tensor(np.eye(2)[None])  # values = identity -> accum reads weights
        accum, resid = composite_from_alpha(alpha, basis)
        np.testing.assert_allclose(accum.data, [[0.5, 0.25]], atol=1e-12)
        np.testing.assert_allclose(resid.data, [[0.25]], atol=1e-12)

    def test_single_opaque_sample_passes_value_exactly(self):
        accum, resid = composite_from_alpha(
            np.array([[1.0]]), Tensor(np.array([[[2.0]]])))
        assert accum.data[0, 0] == 2.0
        assert resid.data[0, 0] == 0.0

    def test_opaque_first_sample_depth_is_t1_exactly(self):
        sigma = Tensor(np.array([[40.0, 3.0, 1.0, 0.5]]))
        t = np.array([[2.0, 2.5, 3.0, 3.5]])
        depth, _ = composite(sigma, Tensor(t[:, :, None]), np.ones((1, 4)))
        assert depth.data[0, 0] == 2.0

    def test_weight_conservation_property(self, rng):
        """sum(T_i alpha_i) + T_resid = 1 for arbitrary non-negative densities."""
        for _ in range(50):
            r, n = int(rng.integers(1, 6)), int(rng.integers(1, 30))
            sigma = Tensor(rng.uniform(0, 50, size=(r, n)))
            delta = rng.uniform(1e-3, 0.5, size=(r, n))
            basis = Tensor(np.ones((r, n, 1)))
            accum, resid = composite(sigma, basis, delta)
            np.testing.assert_allclose(accum.data[:, 0] + resid.data[:, 0], 1.0,
                                       atol=1e-6)

    def test_zero_density_everything_passes_through(self):
        sigma = Tensor(np.zeros((2, 5)))
        vals = Tensor(np.ones((2, 5, 3)))
        accum, resid = composite(sigma, vals, np.full((2, 5), 0.3))
        np.testing.assert_allclose(accum.data, 0.0)
        np.testing.assert_allclose(resid.data, 1.0)

    def test_fused_backward_matches_primitive_composition(self, rng):
        for _ in range(10):
            r, n, c = 3, 7, 2
            sig_data = rng.uniform(0.0, 4.0, size=(r, n))
            val_data = rng.standard_normal((r, n, c))
            delta = rng.uniform(0.05, 0.4, size=(r, n))
            proj_a = Tensor(rng.standard_normal((r, c)))
            proj_b = Tensor(rng.standard_normal((r, 1)))

            grads = []
            for impl in (composite, composite_primitives):
                sigma = Tensor(sig_data.copy(), requires_grad=True)
                vals = Tensor(val_data.copy(), requires_grad=True)
                with Tape() as tape:
                    accum, resid = impl(sigma, vals, delta)
                    loss = ad.add(ad.tsum(ad.mul(accum, proj_a)),
                                  ad.tsum(ad.mul(resid, proj_b)))
                    tape.backward(loss)
                grads.append((sigma.grad, vals.grad))
            np.testing.assert_allclose(grads[0][0], grads[1][0], atol=1e-6)
            np.testing.assert_allclose(grads[0][1], grads[1][1], atol=1e-6)

    def test_gradients_pass_finite_differences(self, rng):
        sigma = Tensor(rng.uniform(0.1, 3.0, size=(2, 6)), requires_grad=True)
        vals = Tensor(rng.standard_normal((2, 6, 3)), requires_grad=True)
        delta = rng.uniform(0.1, 0.4, size=(2, 6))
        proj_a = Tensor(rng.standard_normal((2, 3)))
        proj_b = Tensor(rng.standard_normal((2, 1)))

        def f(s, v):
            accum, resid = composite(s, v, delta)
            return ad.add(ad.tsum(ad.mul(accum, proj_a)),
                          ad.tsum(ad.mul(resid, proj_b)))

        assert grad_check(f, [sigma, vals]) < 1e-6

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            composite(Tensor(np.array([[-0.1]])), Tensor(np.ones((1, 1, 1))),
                      np.ones((1, 1)))

    def test_non_positive_delta_rejected(self):
        with pytest.raises(ValueError):
            composite(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2, 1))),
                      np.array([[0.5, 0.0]]))

    def test_alpha_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            composite_from_alpha(np.array([[1.2]]), Tensor(np.ones((1, 1, 1))))


class TestVoxelGrid:
    def test_world_vertex_query_returns_vertex_value(self, rng):
        grid = VoxelGrid((3, 3, 3), 2, (-1, -1, -1), (1, 1, 1))
        grid.values.data[:] = rng.standard_normal(grid.values.shape).astype(np.float32)
        out = grid.sample(np.array([[0.0, 0.0, 0.0]]))  # center vertex (1,1,1)
        np.testing.assert_allclose(out.data[0], grid.values.data[:, 1, 1, 1],
                                   rtol=1e-6)

    def test_gradient_reaches_grid_values_not_points(self, rng):
        grid = VoxelGrid((3, 3, 3), 1, (0, 0, 0), (1, 1, 1))
        pts = rng.uniform(0, 1, size=(5, 3))
        with Tape() as tape:
            tape.backward(ad.tsum(grid.sample(pts)))
        assert grid.values.grad is not None
        assert np.any(grid.values.grad != 0)

    def test_degenerate_dims_rejected(self):
        with pytest.raises(ValueError):
            VoxelGrid((1, 3, 3), 1, (0, 0, 0), (1, 1, 1))

    def test_inverted_bbox_rejected(self):
        with pytest.raises(ValueError):
            VoxelGrid((3, 3, 3), 1, (0, 0, 0), (1, -1, 1))


class TestRaySampling:
    def test_uniform_spacing_hand_example(self):
        cam = Camera(4, 4, 3.0, np.eye(4), near=1.0, far=3.0)
        rs = sample_ray(cam, (1, 1), n_samples=3)
        np.testing.assert_allclose(rs.t, [1.0, 2.0, 3.0], atol=1e-12)
        np.testing.assert_allclose(rs.delta, [1.0, 1.0], atol=1e-12)
        assert rs.positions.shape == (3, 3)

    def test_jitter_stays_in_cells_and_is_reproducible(self):
        cam = Camera(8, 8, 5.0, np.eye(4), near=1.0, far=5.0)
        n = 16
        base = np.linspace(1.0, 5.0, n)
        h = (5.0 - 1.0) / (n - 1)
        a = sample_ray(cam, (2, 3), n, jitter=True,
                       rng=np.random.default_rng(7), upscale=2)
        b = sample_ray(cam, (2, 3), n, jitter=True,
                       rng=np.random.default_rng(7), upscale=2)
        np.testing.assert_array_equal(a.t, b.t)
        assert np.all(a.t >= 1.0) and np.all(a.t <= 5.0)
        assert np.all(np.abs(a.t - base) <= 0.5 * h + 1e-12)
        assert np.all(np.diff(a.t) > 0)

    def test_positions_lie_on_the_ray(self, rng):
        cam = Camera(16, 16, 10.0, spherical_pose(25.0, -30.0, 4.0),
                     near=2.0, far=6.0)
        rs = sample_ray(cam, (3, 5), 8, upscale=2)
        recon = rs.origin + rs.t[:, None] * rs.direction
        np.testing.assert_allclose(rs.positions, recon, atol=1e-12)

    def test_patch_rays_match_single_ray_api(self):
        cam = Camera(16, 16, 10.0, spherical_pose(110.0, -25.0, 4.0),
                     near=2.0, far=6.0)
        patch = PatchSpec(x0=8, y0=4, size=8, scale=2)
        origins, dirs, t, delta = patch_rays(cam, patch, 5, dtype=np.float64)
        assert origins.shape == (16, 3) and t.shape == (16, 5)
        # ray index 6 is row 1, col 2 inside the patch (row-major)
        single = sample_ray(cam, (patch.low_x0 + 2, patch.low_y0 + 1), 5, upscale=2)
        np.testing.assert_allclose(dirs[6], single.direction, atol=1e-12)
        np.testing.assert_allclose(t[6], single.t, atol=1e-12)
        np.testing.assert_allclose(delta[6, :-1], single.delta, atol=1e-12)
        assert np.all(delta > 0)

    def test_too_few_samples_rejected(self):
        cam = Camera(4, 4, 3.0, np.eye(4))
        with pytest.raises(ValueError):
            sample_ray(cam, (0, 0), 1)


class TestFieldEncoder:
    def _tiny_encoder(self, dtype=np.float32, seed=3):
        return FieldEncoder((4, 4, 4), (-1, -1, -1), (1, 1, 1), color_channels=4,
                            mlp_width=8, feature_dim=3, rng=np.random.default_rng(seed),
                            dtype=dtype)

    def test_density_of_raw_zero_is_log_two(self):
        enc = self._tiny_encoder()
        enc.density_grid.values.data[:] = 0.0
        sig = enc.query_density(np.array([[0.2, -0.3, 0.5]], dtype=np.float32))
        assert abs(sig.data[0, 0] - math.log(2.0)) < 1e-6

    def test_density_outside_box_is_exactly_zero(self):
        enc = self._tiny_encoder()
        enc.density_grid.values.data[:] = 3.0
        sig = enc.query_density(np.array([[2.0, 0.0, 0.0], [0.0, -1.01, 0.0]],
                                         dtype=np.float32))
        assert sig.data[0, 0] == 0.0
        assert sig.data[1, 0] == 0.0

    def test_density_non_negative_for_any_grid(self, rng):
        enc = self._tiny_encoder()
        enc.density_grid.values.data[:] = rng.uniform(
            -50, 50, size=enc.density_grid.values.shape).astype(np.float32)
        pts = rng.uniform(-1.5, 1.5, size=(100, 3)).astype(np.float32)
        assert np.all(enc.query_density(pts).data >= 0.0)

    def test_positional_encoding_width(self):
        enc = positional_encoding(np.zeros((5, 3)), 4)
        assert enc.shape == (5, 3 + 3 * 8)
        np.testing.assert_allclose(enc[:, 3:15:2][:, 0], 0.0)  # sin(0) terms

    def test_feature_vector_width(self, rng):
        enc = self._tiny_encoder()
        pts = rng.uniform(-1, 1, size=(7, 3)).astype(np.float32)
        dirs = rng.standard_normal((7, 3)).astype(np.float32)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        g = enc.query_color_features(pts, dirs)
        assert g.shape == (7, 3)

    def test_rgb_head_commutes_with_compositing(self, rng):
        """Linear head: head(sum w g) equals sum w head(g) (zero bias)."""
        r, n, f = 4, 9, 3
        enc = self._tiny_encoder(dtype=np.float64)
        enc.rgb_b.data[:] = 0.0
        sigma = Tensor(rng.uniform(0, 5, size=(r, n)))
        delta = rng.uniform(0.05, 0.3, size=(r, n))
        g = rng.standard_normal((r, n, f))
        accum, _ = composite(sigma, Tensor(g), delta)
        lhs = ad.matmul(accum, enc.rgb_w).data
        per_sample = (g.reshape(-1, f) @ enc.rgb_w.data).reshape(r, n, 3)
        rhs, _ = composite(sigma, Tensor(per_sample), delta)
        np.testing.assert_allclose(lhs, rhs.data, atol=1e-5)

    def test_zero_density_renders_white_background(self):
        enc = self._tiny_encoder()
        enc.density_grid.values.data[:] = -40.0  # softplus -> ~4e-18
        cam = Camera(8, 8, 6.0, spherical_pose(45.0, -30.0, 4.0), near=2.0, far=6.0)
        patch = PatchSpec(x0=0, y0=0, size=8, scale=2)
        out = enc.render_patch_lowres(cam, patch, n_samples=16)
        assert isinstance(out, EncoderOutput)
        np.testing.assert_allclose(out.rgb_low.data, 1.0, atol=1e-6)
        np.testing.assert_allclose(out.depth.data, 0.0, atol=1e-6)
        np.testing.assert_allclose(out.features.data, 0.0, atol=1e-6)

    def test_render_patch_shapes_and_range(self, rng):
        enc = self._tiny_encoder()
        enc.density_grid.values.data[:] = rng.uniform(
            -3, 3, size=enc.density_grid.values.shape).astype(np.float32)
        enc.color_grid.values.data[:] = rng.uniform(
            -1, 1, size=enc.color_grid.values.shape).astype(np.float32)
        cam = Camera(16, 16, 11.0, spherical_pose(120.0, -20.0, 4.0),
                     near=2.0, far=6.0)
        patch = PatchSpec(x0=4, y0=8, size=8, scale=2)
        out = enc.render_patch_lowres(cam, patch, n_samples=12)
        assert out.features.shape == (3, 4, 4)
        assert out.depth.shape == (4, 4)
        assert out.rgb_low.shape == (3, 4, 4)
        assert np.all(out.rgb_low.data >= 0.0) and np.all(out.rgb_low.data <= 1.0)
        assert np.all(out.depth.data >= 0.0) and np.all(out.depth.data <= 6.0)

    def test_full_encoder_gradcheck_on_2x2_patch(self, rng):
        """Grids + MLP + head through rendering and an MSE target, float64."""
        enc = self._tiny_encoder(dtype=np.float64, seed=12)
        enc.density_grid.values.data[:] = rng.uniform(
            -2.0, 2.0, size=enc.density_grid.values.shape)
        enc.color_grid.values.data[:] = 0.3 * rng.standard_normal(
            enc.color_grid.values.shape)
        cam = Camera(8, 8, 6.0, spherical_pose(60.0, -25.0, 4.0), near=2.2, far=5.8)
        patch = PatchSpec(x0=2, y0=4, size=4, scale=2)
        target = rng.uniform(0.2, 0.8, size=(3, 2, 2))
        proj_f = rng.standard_normal((3, 2, 2))
        proj_d = rng.standard_normal((2, 2))
        params = list(enc.parameters().values())

        def f(*_):
            out = enc.render_patch_lowres(cam, patch, n_samples=6)
            err = ad.sub(out.rgb_low, Tensor(target))
            loss = ad.tmean(ad.mul(err, err))
            loss = ad.add(loss, ad.tmean(ad.mul(out.features, Tensor(proj_f))))
            return ad.add(loss, ad.tmean(ad.mul(out.depth, Tensor(proj_d))))

        assert grad_check(f, params) < 1e-4

import numpy as np
import pytest

from hoidiff.errors import ShapeMismatch
from hoidiff.guidance import (PartGrid, _ExactPart, cached_part_grids,
                              exact_parts, make_steering, penetration_energy,
                              penetration_report, penetration_value_and_grad,
                              valid_rot6d_mask)
from hoidiff.handmodel import HandTemplate, default_template
from hoidiff.meshgeom import box_mesh, icosphere
from hoidiff.motiondata import LayoutSpec, Trajectory, encode_object_relative
from hoidiff.rotgeom import matrix_to_rot6d, random_rotation

IDENT6 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def base_state(F, layout):
    st = np.zeros((F, layout.J, 9))
    st[:, :, :6] = IDENT6
    return st


def small_rotation(rng, scale=0.25):
    w = scale * rng.standard_normal(3)
    th = np.linalg.norm(w)
    k = w / th if th > 0 else np.array([1.0, 0, 0])
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)


def point_hand():
    """Template with a single skin vertex glued to the wrist joint."""
    base = default_template("right")
    return HandTemplate(base.offsets, base.bone_radius, base.bone_extension,
                        1, base.pad_center, base.pad_radius, "right",
                        _samples=(np.array([0]), np.zeros((1, 3))))


@pytest.fixture(scope="module")
def sphere4():
    return icosphere(2, 0.04)


class TestEnergy:
    def test_far_scene_has_zero_energy_and_grad(self, sphere4):
        layout = LayoutSpec(("right",), 1)
        st = base_state(2, layout)
        st[:, layout.object_joint(0), 6:9] = [0.5, 0.5, 0.5]   # part far away
        value, grad, info = penetration_value_and_grad(
            st, layout, {"right": default_template("right")},
            exact_parts([sphere4]))
        assert value == 0.0
        assert np.all(grad == 0.0)
        assert info["inside"] == 0

    def test_vertex_at_sphere_center_scores_radius_squared(self, sphere4):
        # a single skin vertex at the center of a radius-r sphere is at
        # distance exactly r from every mesh vertex
        layout = LayoutSpec(("right",), 1)
        st = base_state(1, layout)               # wrist at origin == center
        value, grad, info = penetration_value_and_grad(
            st, layout, {"right": point_hand()}, exact_parts([sphere4]),
            normalize="raw")
        assert info["inside"] == 1
        assert value == pytest.approx(0.04 ** 2, rel=1e-12)
        # relative object translation sees the full pull, wrist does not
        assert np.linalg.norm(grad[0, layout.object_joint(0), 6:9]) == \
            pytest.approx(2 * 0.04, rel=1e-9)
        assert np.all(grad[0, 0, 6:9] == 0.0)

    def test_energy_invariant_under_global_rigid_motion(self, sphere4):
        layout = LayoutSpec(("right",), 1)
        rng = np.random.default_rng(0)
        st = base_state(2, layout)
        st[:, 0, :6] = matrix_to_rot6d(small_rotation(rng))
        st[:, 0, 6:9] = [0.0, 0.01, -0.01]
        st[:, layout.object_joint(0), 6:9] = [0.02, 0.0, 0.0]
        tmpl = {"right": default_template("right")}
        parts = exact_parts([sphere4])
        v0 = penetration_energy(st, layout, tmpl, parts)
        assert v0 > 0.0
        Rg = random_rotation(rng)
        tg = np.array([0.3, -0.2, 0.1])
        moved = st.copy()
        for f in range(2):
            Rw = np.array([[1.0, 0, 0], [0, 1, 0], [0, 0, 1]])
            Rw = small_rotation(np.random.default_rng(0))  # same as above
            moved[f, 0, :6] = matrix_to_rot6d(Rg @ Rw)
            moved[f, 0, 6:9] = Rg @ st[f, 0, 6:9] + tg
        v1 = penetration_energy(moved, layout, tmpl, parts)
        assert v1 == pytest.approx(v0, rel=1e-9)

    def test_per_frame_locality(self, sphere4):
        layout = LayoutSpec(("right",), 1)
        st = base_state(3, layout)
        st[:, layout.object_joint(0), 6:9] = [0.02, 0.0, 0.0]
        tmpl = {"right": default_template("right")}
        parts = exact_parts([sphere4])
        _, g0, _ = penetration_value_and_grad(st, layout, tmpl, parts)
        bumped = st.copy()
        bumped[2, 0, 6:9] += 0.37                 # move frame 2 far away
        _, g1, _ = penetration_value_and_grad(bumped, layout, tmpl, parts)
        assert np.array_equal(g0[0], g1[0])
        assert np.array_equal(g0[1], g1[1])

    def test_degenerate_frames_are_skipped(self, sphere4):
        layout = LayoutSpec(("right",), 1)
        st = base_state(2, layout)
        st[:, layout.object_joint(0), 6:9] = [0.02, 0.0, 0.0]
        st[1, 3, :6] = 0.0                        # kill one finger rotation
        tmpl = {"right": default_template("right")}
        value, grad, info = penetration_value_and_grad(
            st, layout, tmpl, exact_parts([sphere4]))
        assert info["skipped_frames"] == 1
        assert np.all(grad[1] == 0.0)
        whole, _, _ = penetration_value_and_grad(
            st[:1], layout, tmpl, exact_parts([sphere4]))
        assert value == pytest.approx(whole, rel=1e-12)

    def test_validation(self, sphere4):
        layout = LayoutSpec(("right",), 1)
        tmpl = {"right": default_template("right")}
        with pytest.raises(ShapeMismatch):
            penetration_value_and_grad(np.zeros((2, 5, 9)), layout, tmpl,
                                       exact_parts([sphere4]))
        with pytest.raises(ShapeMismatch):
            penetration_value_and_grad(base_state(1, layout), layout, tmpl,
                                       exact_parts([sphere4, sphere4]))
        with pytest.raises(ShapeMismatch):
            penetration_value_and_grad(base_state(1, layout), layout, tmpl,
                                       exact_parts([sphere4]),
                                       normalize="bogus")

    def test_valid_rot6d_mask(self):
        a = np.stack([IDENT6, np.zeros(6),
                      np.array([1.0, 0, 0, 2.0, 0, 0])])  # parallel columns
        assert valid_rot6d_mask(a).tolist() == [True, False, False]


class TestGradientAgainstFiniteDifferences:
    def test_two_hands_inside_box(self):
        layout = LayoutSpec(("right", "left"), 1)
        templates = {"right": default_template("right"),
                     "left": default_template("right").mirrored()}
        box = box_mesh((0.30, 0.30, 0.20), max_edge=0.03)
        parts = exact_parts([box])
        rng = np.random.default_rng(12)
        F = 2
        st = base_state(F, layout)
        for f in range(F):
            for j in range(layout.J):
                st[f, j, :6] = matrix_to_rot6d(small_rotation(rng, 0.2))
        st[:, 0, 6:9] = [-0.05, 0.01, 0.0]
        st[:, 16, 6:9] = [0.05, -0.01, 0.01]
        oj = layout.object_joint(0)
        st[:, oj, 6:9] = [0.01, 0.0, -0.01]

        value, grad, info = penetration_value_and_grad(
            st, layout, templates, parts, normalize="raw")
        assert info["inside"] > 50
        assert value > 0.0

        probe = [(f, j, c)
                 for f in range(F)
                 for j in (0, 2, 10, 16, 21, oj)
                 for c in range(9)]
        h = 1e-6
        for (f, j, c) in probe:
            sp = st.copy()
            sp[f, j, c] += h
            sm = st.copy()
            sm[f, j, c] -= h
            fd = (penetration_energy(sp, layout, templates, parts)
                  - penetration_energy(sm, layout, templates, parts)) / (2 * h)
            assert grad[f, j, c] == pytest.approx(fd, rel=2e-4, abs=1e-7), \
                (f, j, c)

    def test_right_wrist_translation_gradient_is_exactly_zero(self, sphere4):
        # single right hand: hand and object ride the wrist together
        layout = LayoutSpec(("right",), 1)
        rng = np.random.default_rng(5)
        st = base_state(2, layout)
        for f in range(2):
            st[f, 0, :6] = matrix_to_rot6d(small_rotation(rng))
        st[:, 0, 6:9] = [0.01, -0.02, 0.005]
        st[:, layout.object_joint(0), 6:9] = [0.03, 0.01, 0.0]
        _, grad, info = penetration_value_and_grad(
            st, layout, {"right": default_template("right")},
            exact_parts([sphere4]), normalize="raw")
        assert info["inside"] > 0
        assert np.count_nonzero(grad) > 0
        assert np.all(grad[:, 0, 6:9] == 0.0)

    def test_mean_normalization_divides_by_frame_and_vertex_count(self, sphere4):
        layout = LayoutSpec(("right",), 1)
        st = base_state(2, layout)
        st[:, layout.object_joint(0), 6:9] = [0.02, 0.0, 0.0]
        tmpl = {"right": default_template("right")}
        parts = exact_parts([sphere4])
        _, g_raw, _ = penetration_value_and_grad(st, layout, tmpl, parts,
                                                 normalize="raw")
        _, g_mean, _ = penetration_value_and_grad(st, layout, tmpl, parts,
                                                  normalize="mean")
        nv = tmpl["right"].n_skin_vertices
        assert np.allclose(g_mean * (2 * nv), g_raw, atol=1e-15)


class TestPartGrid:
    def test_matches_exact_away_from_surface(self, sphere4):
        grid = PartGrid.build(sphere4, pitch=0.002)
        rng = np.random.default_rng(3)
        pts = rng.uniform(-0.055, 0.055, size=(4000, 3))
        r = np.linalg.norm(pts, axis=1)
        clear = (r < 0.0355) | (r > 0.0445)       # off the faceted shell
        pts = pts[clear]
        g_in, g_p = grid.classify_local(pts)
        e_in, e_p = _ExactPart(sphere4).classify_local(pts)
        assert np.array_equal(g_in, e_in)
        d_g = np.linalg.norm(pts[g_in] - g_p[g_in], axis=1)
        d_e = np.linalg.norm(pts[e_in] - e_p[e_in], axis=1)
        assert np.all(d_g >= d_e - 1e-12)
        assert np.all(d_g <= d_e + np.sqrt(3) * 0.002 + 1e-12)

    def test_interior_volume_close_to_mesh_volume(self, sphere4):
        grid = PartGrid.build(sphere4, pitch=0.002)
        vol = grid.interior.sum() * 0.002 ** 3
        assert vol == pytest.approx(sphere4.volume(), rel=0.03)

    def test_out_of_bounds_is_outside(self, sphere4):
        grid = PartGrid.build(sphere4, pitch=0.004)
        inside, _ = grid.classify_local(np.array([[1.0, 1.0, 1.0]]))
        assert not inside[0]

    def test_cache_returns_same_objects(self, sphere4):
        a = cached_part_grids("test:sph", [sphere4])
        b = cached_part_grids("test:sph", [sphere4])
        assert a[0] is b[0]
        c = cached_part_grids("test:sph2", [sphere4])
        assert c[0] is not a[0]

    def test_grid_energy_tracks_exact_energy(self, sphere4):
        layout = LayoutSpec(("right",), 1)
        st = base_state(2, layout)
        st[:, layout.object_joint(0), 6:9] = [0.02, 0.0, 0.0]
        tmpl = {"right": default_template("right")}
        e_exact = penetration_energy(st, layout, tmpl, exact_parts([sphere4]))
        e_grid = penetration_energy(st, layout, tmpl,
                                    [PartGrid.build(sphere4, pitch=0.002)])
        assert e_exact > 0
        assert e_grid == pytest.approx(e_exact, rel=0.15)


class TestSteering:
    def make_scene(self):
        layout = LayoutSpec(("right",), 1)
        tmpl = {"right": default_template("right")}
        sphere = icosphere(2, 0.04)
        st = base_state(2, layout)
        st[:, layout.object_joint(0), 6:9] = [0.02, 0.0, 0.0]
        x = st.reshape(1, -1)
        return layout, tmpl, sphere, st, x

    def test_warmup_and_scale_gating(self):
        layout, tmpl, sphere, st, x = self.make_scene()
        steer = make_steering(layout, 2, tmpl, [exact_parts([sphere])],
                              scale=7.0, warmup=100, t_max=1000)
        assert steer(x, 1000) is x
        assert steer(x, 901) is x
        out = steer(x, 900)
        assert out is not x
        assert not np.array_equal(out, x)
        assert steer.stats["applied_steps"] == 1

        off = make_steering(layout, 2, tmpl, [exact_parts([sphere])],
                            scale=0.0, warmup=100, t_max=1000)
        assert off(x, 900) is x

    def test_step_reduces_energy(self):
        layout, tmpl, sphere, st, x = self.make_scene()
        parts = exact_parts([sphere])
        steer = make_steering(layout, 2, tmpl, [parts], scale=7.0,
                              warmup=0, t_max=1000)
        e0 = penetration_energy(st, layout, tmpl, parts)
        out = steer(x, 500)
        e1 = penetration_energy(out[0].reshape(st.shape), layout, tmpl, parts)
        assert e1 < e0

    def test_none_entry_left_untouched(self):
        layout, tmpl, sphere, st, x = self.make_scene()
        x2 = np.vstack([x, x])
        steer = make_steering(layout, 2, tmpl,
                              [exact_parts([sphere]), None],
                              scale=7.0, warmup=0, t_max=1000)
        out = steer(x2, 500)
        assert not np.array_equal(out[0], x2[0])
        assert np.array_equal(out[1], x2[1])

    def test_wrong_state_length(self):
        layout, tmpl, sphere, st, x = self.make_scene()
        steer = make_steering(layout, 2, tmpl, [exact_parts([sphere])],
                              scale=1.0, warmup=0)
        with pytest.raises(ShapeMismatch):
            steer(np.zeros((1, 100)), 500)


class TestReport:
    def test_report_matches_encoded_energy(self):
        layout = LayoutSpec(("right",), 1)
        tmpl = {"right": default_template("right")}
        sphere = icosphere(2, 0.04)
        rng = np.random.default_rng(9)
        F = 3
        rot6d = np.tile(IDENT6, (F, layout.J, 1))
        transl = np.zeros((F, layout.J, 3))
        rot6d[:, 0, :] = matrix_to_rot6d(small_rotation(rng))
        transl[:, layout.object_joint(0), :] = [0.02, 0.0, 0.0]
        transl[2, 0, :] = [0.8, 0.0, 0.0]         # frame 2 is far away
        traj = Trajectory(layout, 12.0, "lift", rot6d, transl)
        rep = penetration_report(traj, tmpl, [sphere])
        assert rep["per_frame"].shape == (F,)
        assert rep["per_frame"][2] == 0.0
        assert rep["per_frame"][0] > 0.0
        assert rep["total"] == pytest.approx(rep["per_frame"].sum(), rel=1e-12)
        assert rep["per_part"].sum() == pytest.approx(rep["total"], rel=1e-12)

        enc = encode_object_relative(traj)
        st = np.concatenate([enc.rot6d, enc.transl], axis=-1)
        val = penetration_energy(st, layout, tmpl, exact_parts([sphere]))
        assert val == pytest.approx(rep["total"], rel=1e-9, abs=1e-15)

import numpy as np
import pytest

from hoidiff.errors import InsufficientData
from hoidiff.handmodel import HandTemplate, default_template
from hoidiff.meshgeom import box_mesh, icosphere
from hoidiff.metrics import (ActionClassifier, SeqEval, build_seq_evals,
                             diversity, evaluate_set, frechet_distance,
                             geometry_metrics, motion_descriptor)
from hoidiff.motiondata import LayoutSpec, Trajectory
from hoidiff.rotgeom import matrix_to_rot6d, random_rotation

IDENT6 = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def make_traj(layout, F, obj_t, wrist_t=None, fps=12.0):
    rot6d = np.tile(IDENT6, (F, layout.J, 1))
    transl = np.zeros((F, layout.J, 3))
    for part in range(layout.object_parts):
        transl[:, layout.object_joint(part), :] = obj_t
    if wrist_t is not None:
        transl[:, 0, :] = wrist_t
    return Trajectory(layout, fps, "lift", rot6d, transl)


def point_hand(local=(0.0, 0.0, 0.0)):
    base = default_template("right")
    return HandTemplate(base.offsets, base.bone_radius, base.bone_extension,
                        1, base.pad_center, base.pad_radius, "right",
                        _samples=(np.array([0]),
                                  np.asarray(local, dtype=np.float64)[None, :]))


class TestFrechet:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((200, 8))
        assert frechet_distance(x, x) <= 1e-6

    def test_point_masses(self):
        a = np.tile([1.0, 2.0, 3.0], (5, 1))
        b = np.tile([1.0, 2.0, 7.0], (5, 1))
        assert frechet_distance(a, b) == pytest.approx(16.0, rel=1e-12)

    def test_one_dimensional_closed_form(self):
        rng = np.random.default_rng(1)
        a = rng.normal(0.0, 1.0, size=(10_000, 1))
        b = rng.normal(1.5, 2.0, size=(10_000, 1))
        d2 = frechet_distance(a, b)
        # identity on the same sample statistics
        sa, sb = a.std(ddof=1), b.std(ddof=1)
        expect = (a.mean() - b.mean()) ** 2 + (sa - sb) ** 2
        assert d2 == pytest.approx(expect, rel=1e-9)
        # and close to the population value
        assert d2 == pytest.approx(1.5 ** 2 + 1.0 ** 2, rel=0.05)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((60, 5))
        b = rng.standard_normal((60, 5)) + 0.3
        assert frechet_distance(a, b) == pytest.approx(
            frechet_distance(b, a), rel=1e-9)
        assert frechet_distance(a, a + 1e-9) >= 0.0

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            frechet_distance(np.zeros((1, 3)), np.zeros((5, 3)))

    def test_diversity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((100, 6))
        d1 = diversity(x, np.random.default_rng(7))
        d2 = diversity(x, np.random.default_rng(7))
        assert d1 == d2
        assert d1 > 0.0
        same = np.tile([1.0, 2.0], (40, 1))
        assert diversity(same, np.random.default_rng(0)) == pytest.approx(0.0, abs=1e-9)
        with pytest.raises(InsufficientData):
            diversity(x[:3], rng)


class TestClassifier:
    def blobs(self, n_per=60, seed=0):
        rng = np.random.default_rng(seed)
        centers = np.array([[3.0, 0, 0, 0], [0, 3.0, 0, 0], [0, 0, 3.0, 0]])
        feats = np.concatenate([
            c + 0.5 * rng.standard_normal((n_per, 4)) for c in centers])
        labels = np.repeat(np.arange(3), n_per)
        return feats, labels

    def test_learns_separable_blobs(self):
        feats, labels = self.blobs()
        clf = ActionClassifier(4, 3, hidden=16, seed=0).fit(feats, labels)
        assert clf.accuracy(feats, labels) >= 0.95
        held, held_labels = self.blobs(seed=9)
        assert clf.accuracy(held, held_labels) >= 0.9

    def test_deterministic(self):
        feats, labels = self.blobs()
        a = ActionClassifier(4, 3, seed=5).fit(feats, labels)
        b = ActionClassifier(4, 3, seed=5).fit(feats, labels)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_embed_shape_and_range(self):
        feats, labels = self.blobs()
        clf = ActionClassifier(4, 3, hidden=16, seed=0).fit(feats, labels)
        emb = clf.embed(feats[:7])
        assert emb.shape == (7, 16)
        assert np.all(np.abs(emb) <= 1.0)


class TestMotionDescriptor:
    def test_dimension_is_twelve_per_joint(self):
        tmpl = {"right": default_template("right")}
        for parts, J in ((1, 17), (2, 18)):
            layout = LayoutSpec(("right",), parts)
            traj = make_traj(layout, 6, obj_t=[0.2, 0.0, 0.0])
            assert motion_descriptor(traj, tmpl).shape == (12 * J,)

    def test_invariant_to_global_translation(self):
        tmpl = {"right": default_template("right")}
        layout = LayoutSpec(("right",), 1)
        traj = make_traj(layout, 5, obj_t=[0.2, 0.0, 0.0])
        shifted = traj.copy()
        shifted.transl = shifted.transl + np.array([1.0, -2.0, 0.5])
        a = motion_descriptor(traj, tmpl)
        b = motion_descriptor(shifted, tmpl)
        assert np.allclose(a, b, atol=1e-12)

    def test_static_sequence_has_zero_velocity_and_spread(self):
        tmpl = {"right": default_template("right")}
        layout = LayoutSpec(("right",), 1)
        traj = make_traj(layout, 5, obj_t=[0.2, 0.0, 0.0])
        d = motion_descriptor(traj, tmpl)
        J3 = layout.J * 3
        assert np.all(d[J3:2 * J3] == 0.0)       # mean velocity
        assert np.allclose(d[2 * J3:], 0.0, atol=1e-12)   # both spreads

    def test_velocity_scales_with_fps(self):
        tmpl = {"right": default_template("right")}
        layout = LayoutSpec(("right",), 1)
        a = make_traj(layout, 4, obj_t=[0.3, 0.0, 0.0], fps=10.0)
        b = make_traj(layout, 4, obj_t=[0.3, 0.0, 0.0], fps=20.0)
        for t in (a, b):
            t.transl[:, 0, 2] = np.arange(4) * 0.01   # steady wrist rise
        da = motion_descriptor(a, tmpl)
        db = motion_descriptor(b, tmpl)
        J3 = layout.J * 3
        assert np.allclose(db[J3:2 * J3], 2.0 * da[J3:2 * J3], atol=1e-12)


class TestGeometryMetrics:
    def test_depth_anchor_sphere_center(self):
        # a lone vertex at the center of a 5 cm sphere is 5 cm deep
        layout = LayoutSpec(("right",), 1)
        traj = make_traj(layout, 2, obj_t=[0.0, 0.0, 0.0])
        geo = geometry_metrics(traj, {"right": point_hand()},
                               [icosphere(3, 0.05)])
        assert geo["depth_cm"] == pytest.approx(5.0, rel=0.02)
        assert geo["iv_cm3"] > 0.0

    def test_clean_scene_scores_zero(self):
        layout = LayoutSpec(("right",), 1)
        traj = make_traj(layout, 2, obj_t=[0.5, 0.0, 0.0])
        geo = geometry_metrics(traj, {"right": point_hand()},
                               [icosphere(2, 0.04)])
        assert geo["depth_cm"] == 0.0
        assert geo["iv_cm3"] == 0.0
        assert geo["cr"] == 0.0

    def test_intersection_volume_anchor_capsule_in_box(self):
        # one real capsule, everything else shrunk to nothing
        offsets = np.zeros((16, 3))
        offsets[1] = [0.06, 0.0, 0.0]
        radii = np.full(15, 1e-6)
        radii[0] = 0.008
        axis_pts = np.zeros((4, 3))
        axis_pts[:, 0] = [0.01, 0.02, 0.04, 0.05]
        tmpl = HandTemplate(offsets, radii, np.zeros(15), 2,
                            [0.0, 0.0, 0.0], 1e-6, "right",
                            _samples=(np.zeros(4, dtype=np.int64), axis_pts))
        layout = LayoutSpec(("right",), 1)
        traj = make_traj(layout, 1, obj_t=[0.0, 0.0, 0.0])
        geo = geometry_metrics(traj, {"right": tmpl},
                               [box_mesh((0.3, 0.3, 0.2), max_edge=0.05)],
                               iv_pitch=0.001)
        L, r = 0.06, 0.008
        expect = (np.pi * r * r * L + 4.0 / 3.0 * np.pi * r ** 3) * 1e6
        assert geo["iv_cm3"] == pytest.approx(expect, rel=0.05)

    def test_peak_frame_tracks_deepest_frame(self):
        layout = LayoutSpec(("right",), 1)
        traj = make_traj(layout, 3, obj_t=[0.0, 0.0, 0.0])
        # frame 0 outside, frame 1 shallow, frame 2 at center
        traj.transl[0, 0, :] = [0.5, 0.0, 0.0]
        traj.transl[1, 0, :] = [0.045, 0.0, 0.0]
        traj.transl[2, 0, :] = [0.0, 0.0, 0.0]
        geo = geometry_metrics(traj, {"right": point_hand()},
                               [icosphere(3, 0.05)])
        assert geo["peak_frame"] == 2

    def test_contact_ratio_vertex_rule(self):
        layout = LayoutSpec(("right",), 1)
        sphere = icosphere(2, 0.04)
        near = make_traj(layout, 2, obj_t=[0.0, 0.0, 0.0])
        near.transl[:, 0, :] = [0.043, 0.0, 0.0]     # 3 mm past a vertex
        geo = geometry_metrics(near, {"right": point_hand()}, [sphere])
        assert geo["cr"] == 1.0
        far = make_traj(layout, 2, obj_t=[0.0, 0.0, 0.0])
        far.transl[:, 0, :] = [0.08, 0.0, 0.0]
        geo = geometry_metrics(far, {"right": point_hand()}, [sphere])
        assert geo["cr"] == 0.0

    def test_contact_surface_variant_differs_on_sparse_mesh(self):
        # 2 mm off the center of a huge face: close to the surface,
        # far from every vertex
        layout = LayoutSpec(("right",), 1)
        box = box_mesh((0.1, 0.1, 0.1), max_edge=0.05)
        traj = make_traj(layout, 1, obj_t=[0.0, 0.0, 0.0])
        traj.transl[:, 0, :] = [0.052, 0.0125, 0.0125]
        tmpl = {"right": point_hand()}
        assert geometry_metrics(traj, tmpl, [box])["cr"] == 0.0
        assert geometry_metrics(traj, tmpl, [box],
                                contact_to="surface")["cr"] == 1.0

    def test_contact_fraction_averages_over_vertices(self):
        # two skin vertices, one touching and one far: ratio 0.5
        base = default_template("right")
        two = HandTemplate(base.offsets, base.bone_radius,
                           base.bone_extension, 1, base.pad_center,
                           base.pad_radius, "right",
                           _samples=(np.array([0, 0]),
                                     np.array([[0.0, 0.0, 0.0],
                                               [0.3, 0.0, 0.0]])))
        layout = LayoutSpec(("right",), 1)
        traj = make_traj(layout, 2, obj_t=[0.0, 0.0, 0.0])
        traj.transl[:, 0, :] = [0.043, 0.0, 0.0]
        geo = geometry_metrics(traj, {"right": two}, [icosphere(2, 0.04)])
        assert geo["cr"] == 0.5


class TestEvaluateSet:
    def fake_evals(self, n, seed=0, acc=0.8):
        rng = np.random.default_rng(seed)
        rows = []
        for i in range(n):
            label = i % 5
            pred = label if rng.random() < acc else (label + 1) % 5
            rows.append(SeqEval(label, pred, rng.standard_normal(16),
                                float(rng.random()), float(rng.random() * 20),
                                float(rng.random())))
        return rows

    def test_aggregates_with_intervals(self):
        rows = self.fake_evals(60)
        ref = np.random.default_rng(1).standard_normal((60, 16))
        out = evaluate_set(rows, ref, seed=0, reps=20)
        assert set(out) == {"ACC", "FID", "DIV", "ID", "IV", "CR"}
        for m, (mean, ci) in out.items():
            assert np.isfinite(mean)
            assert ci is not None and ci >= 0.0
        assert 0.0 <= out["ACC"][0] <= 1.0

    def test_single_rep_has_no_interval(self):
        rows = self.fake_evals(40)
        ref = np.random.default_rng(1).standard_normal((40, 16))
        out = evaluate_set(rows, ref, seed=0, reps=1)
        assert all(ci is None for _, ci in out.values())

    def test_fid_omitted_for_reference_row(self):
        rows = self.fake_evals(40)
        ref = np.stack([r.embed for r in rows])
        out = evaluate_set(rows, ref, include_fid=False)
        assert "FID" not in out

    def test_deterministic_for_seed(self):
        rows = self.fake_evals(40)
        ref = np.random.default_rng(1).standard_normal((40, 16))
        a = evaluate_set(rows, ref, seed=3)
        b = evaluate_set(rows, ref, seed=3)
        assert a == b
        c = evaluate_set(rows, ref, seed=4)
        assert a != c

    def test_too_few_sequences(self):
        with pytest.raises(InsufficientData):
            evaluate_set(self.fake_evals(5), np.zeros((5, 16)))

    def test_build_seq_evals_pipeline(self):
        layout = LayoutSpec(("right",), 1)
        tmpl = {"right": default_template("right")}
        sphere = icosphere(2, 0.04)
        trajs = [make_traj(layout, 3, obj_t=[0.0, 0.0, 0.0]),
                 make_traj(layout, 3, obj_t=[0.5, 0.0, 0.0])]
        feats = np.stack([motion_descriptor(t, tmpl) for t in trajs])
        clf = ActionClassifier(feats.shape[1], 2, hidden=8, seed=0)
        clf.fit(feats, [0, 1], epochs=20)
        rows = build_seq_evals(trajs, [0, 1], tmpl, [[sphere], [sphere]],
                               clf, mesh_keys=["m0", "m0"])
        assert len(rows) == 2
        assert rows[0].depth_cm > 0.0
        assert rows[1].depth_cm == 0.0
        assert rows[0].embed.shape == (8,)

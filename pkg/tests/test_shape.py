import numpy as np
import pytest

from vehicle3d.geometry import PoseBox3D, box_contains, rot_y
from vehicle3d.shape import (
    InsufficientDataError,
    LandmarkObservations,
    LearnOptions,
    MorphableModel,
    OrthoCamPose,
    ShapeCoefficients,
    fit_coefficients,
    instantiate,
    learn_em,
    load_model,
    ortho_project,
    place_in_camera,
    save_model,
)
from tests.oracles import make_ortho_dataset, random_orthonormal_rows, subspace_angles_deg


def toy_true_model(n_basis, rng, K=14):
    """A well-spread K-point mean in the unit box plus small basis rows.

    Basis rows are kept orthogonal to the pose-absorbable deformation
    directions (otherwise the subspace is not identifiable from 2D data)
    and mutually orthogonal, each with per-point RMS 0.05 model units.
    """
    from tests.oracles import pose_absorbable_directions

    mean = rng.uniform([-0.45, -0.9, -0.45], [0.45, -0.05, 0.45], size=(K, 3))
    basis = rng.normal(size=(n_basis, K, 3))
    if n_basis:
        flat = basis.reshape(n_basis, -1)
        Qw = pose_absorbable_directions(mean)
        flat = flat - (flat @ Qw) @ Qw.T
        q, _ = np.linalg.qr(flat.T)
        flat = (q.T * 0.05 * np.sqrt(3 * K))[:n_basis]
        basis = flat.reshape(n_basis, K, 3)
    return mean, basis


def obs_list(raw):
    return [LandmarkObservations(uv=uv, visible=vis) for uv, vis in raw]


class TestInstantiate:
    def setup_method(self):
        rng = np.random.default_rng(20)
        mean, basis = toy_true_model(3, rng)
        self.model = MorphableModel(mean=mean.reshape(-1), basis=basis.reshape(3, -1))

    def test_zero_alpha_gives_mean(self):
        pts = instantiate(self.model, np.zeros(3))
        assert np.allclose(pts, self.model.mean_points())

    def test_one_hot(self):
        pts = instantiate(self.model, np.array([0.0, 1.0, 0.0]))
        expected = self.model.mean_points() + self.model.basis_points()[1]
        assert np.allclose(pts, expected)

    def test_affine_linearity(self):
        rng = np.random.default_rng(21)
        a1, a2 = rng.normal(size=3), rng.normal(size=3)
        lhs = instantiate(self.model, a1) + instantiate(self.model, a2)
        rhs = instantiate(self.model, a1 + a2) + self.model.mean_points()
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            instantiate(self.model, np.zeros(5))

    def test_accepts_coefficients_type(self):
        pts = instantiate(self.model, ShapeCoefficients(alpha=np.zeros(3)))
        assert np.allclose(pts, self.model.mean_points())


class TestPlaceInCamera:
    def test_identity_pose(self):
        rng = np.random.default_rng(22)
        pts = rng.normal(size=(14, 3))
        pose = PoseBox3D(theta=0.0, T=np.zeros(3), sigma=np.zeros(3))
        assert np.allclose(place_in_camera(pts, pose), pts)

    def test_round_trip(self):
        rng = np.random.default_rng(23)
        pts = rng.normal(size=(14, 3))
        pose = PoseBox3D(
            theta=1.1, T=np.array([2.0, 1.65, 14.0]), sigma=np.log([3.9, 1.6, 1.6])
        )
        placed = place_in_camera(pts, pose)
        back = ((placed - pose.T) @ rot_y(pose.theta)) / pose.dims
        assert np.allclose(back, pts, atol=1e-10)

    def test_containment_in_box(self):
        # Model points inside the unit box stay inside the 3D box after
        # placement, for coefficient draws within 3 sigma.
        rng = np.random.default_rng(24)
        mean, basis = toy_true_model(2, rng)
        model = MorphableModel(mean=mean.reshape(-1), basis=basis.reshape(2, -1))
        pose = PoseBox3D(
            theta=0.8, T=np.array([-1.0, 1.65, 22.0]), sigma=np.log([3.9, 1.6, 1.6])
        )
        for _ in range(50):
            alpha = np.clip(rng.normal(size=2), -3, 3)
            pts = instantiate(model, alpha)
            if np.all(np.abs(pts[:, 0]) <= 0.5) and np.all(
                (-1 <= pts[:, 1]) & (pts[:, 1] <= 0)
            ) and np.all(np.abs(pts[:, 2]) <= 0.5):
                for p in place_in_camera(pts, pose):
                    assert box_contains(pose, p, atol=1e-9)


class TestOrthoProject:
    def test_matches_direct_formula(self):
        rng = np.random.default_rng(25)
        pts = rng.normal(size=(14, 3))
        R = random_orthonormal_rows(rng)
        pose = OrthoCamPose(c=80.0, R=R, t=np.array([0.5, -0.2, 3.0]))
        expected = 80.0 * (pts + pose.t) @ R.T
        assert np.allclose(ortho_project(pose, pts), expected)

    def test_invalid_pose_rejected(self):
        with pytest.raises(ValueError):
            OrthoCamPose(c=-1.0, R=np.eye(3)[:2], t=np.zeros(3))
        with pytest.raises(ValueError):
            OrthoCamPose(c=1.0, R=np.ones((2, 3)), t=np.zeros(3))


class TestLearnEM:
    def test_noise_free_one_basis(self):
        rng = np.random.default_rng(26)
        mean, basis = toy_true_model(1, rng)
        raw, _ = make_ortho_dataset(mean, basis, 40, 0.0, 0.0, rng)
        result = learn_em(obs_list(raw), n_basis=1)
        # Data lies exactly in the model class: reprojections must match.
        for (uv, vis), pose, coef in zip(raw, result.poses, result.coeffs):
            pts = instantiate(result.model, coef)
            err = np.linalg.norm(ortho_project(pose, pts)[vis] - uv[vis], axis=1)
            assert err.max() < 1e-6

    def test_noisy_two_basis_recovery(self):
        rng = np.random.default_rng(27)
        mean, basis = toy_true_model(2, rng)
        raw, _ = make_ortho_dataset(mean, basis, 200, 0.5, 0.0, rng)
        result = learn_em(obs_list(raw), n_basis=2)
        errs = []
        for (uv, vis), pose, coef in zip(raw, result.poses, result.coeffs):
            pts = instantiate(result.model, coef)
            errs.extend(np.linalg.norm(ortho_project(pose, pts)[vis] - uv[vis], axis=1))
        assert np.mean(errs) <= 0.75
        angles = subspace_angles_deg(
            result.model.basis,
            basis.reshape(2, -1),
            result.model.mean,
            mean.reshape(-1),
        )
        assert angles.max() < 5.0

    def test_rigid_factorization_n0(self):
        rng = np.random.default_rng(28)
        mean, _ = toy_true_model(0, rng)
        raw, _ = make_ortho_dataset(mean, np.zeros((0, 14, 3)), 30, 0.0, 0.0, rng)
        result = learn_em(obs_list(raw), n_basis=0)
        assert result.model.n_basis == 0
        assert result.reproj_rmse < 1e-6

    def test_loglik_monotone(self):
        rng = np.random.default_rng(29)
        mean, basis = toy_true_model(2, rng)
        raw, _ = make_ortho_dataset(mean, basis, 60, 1.0, 0.2, rng)
        result = learn_em(obs_list(raw), n_basis=2)
        ll = result.loglik_path
        slack = 1e-9 * np.maximum(np.abs(ll[:-1]), 1.0)
        assert np.all(np.diff(ll) >= -slack)

    def test_gauge_invariants(self):
        rng = np.random.default_rng(30)
        mean, basis = toy_true_model(3, rng)
        raw, _ = make_ortho_dataset(mean, basis, 80, 0.5, 0.1, rng)
        result = learn_em(obs_list(raw), n_basis=3)
        model = result.model
        assert np.linalg.norm(model.mean_points().mean(axis=0)) < 1e-9
        gram = model.basis @ model.basis.T
        off = gram - np.diag(np.diag(gram))
        assert np.max(np.abs(off)) < 1e-6 * max(np.max(np.diag(gram)), 1.0)

    def test_occlusion_agreement(self):
        rng = np.random.default_rng(31)
        mean, basis = toy_true_model(2, rng)
        raw_full, _ = make_ortho_dataset(mean, basis, 150, 0.5, 0.0, rng)
        occluded = []
        for uv, vis in raw_full:
            while True:
                mask = rng.random(len(vis)) >= 0.2
                if mask.sum() >= 6:
                    break
            occluded.append((uv, mask))
        res_full = learn_em(obs_list(raw_full), n_basis=2)
        res_occ = learn_em(obs_list(occluded), n_basis=2)
        for res in (res_full, res_occ):
            angles = subspace_angles_deg(
                res.model.basis, basis.reshape(2, -1), res.model.mean, mean.reshape(-1)
            )
            assert angles.max() < 10.0

    def test_insufficient_data(self):
        rng = np.random.default_rng(32)
        mean, basis = toy_true_model(2, rng)
        raw, _ = make_ortho_dataset(mean, basis, 10, 0.5, 0.0, rng)
        with pytest.raises(InsufficientDataError):
            learn_em(obs_list(raw), n_basis=2)  # needs 20

    def test_low_visibility_instances_dropped(self):
        rng = np.random.default_rng(33)
        mean, basis = toy_true_model(1, rng)
        raw, _ = make_ortho_dataset(mean, basis, 12, 0.0, 0.0, rng)
        uv0, _ = raw[0]
        starved = [(uv0, np.zeros(14, dtype=bool))] + raw[1:]
        result = learn_em(obs_list(starved), n_basis=1)
        assert not result.used_mask[0]
        assert result.used_mask[1:].all()

    def test_max_iterations_flag(self):
        rng = np.random.default_rng(34)
        mean, basis = toy_true_model(1, rng)
        raw, _ = make_ortho_dataset(mean, basis, 15, 1.0, 0.0, rng)
        result = learn_em(
            obs_list(raw), n_basis=1, opts=LearnOptions(max_iterations=2)
        )
        assert not result.converged
        assert result.iterations == 2


class TestFitCoefficients:
    def setup_method(self):
        rng = np.random.default_rng(35)
        mean, basis = toy_true_model(2, rng)
        self.model = MorphableModel(mean=mean.reshape(-1), basis=basis.reshape(2, -1))
        self.rng = rng

    def _observe(self, alpha, visible=None):
        pts = instantiate(self.model, alpha)
        R = random_orthonormal_rows(self.rng)
        pose = OrthoCamPose(c=90.0, R=R, t=np.array([1.0, 2.0, -0.5]))
        uv = ortho_project(pose, pts)
        if visible is None:
            visible = np.ones(len(uv), dtype=bool)
        return LandmarkObservations(uv=uv, visible=visible), pose

    def test_noise_free_recovery(self):
        alpha = np.array([0.7, -1.2])
        obs, pose = self._observe(alpha)
        coef, low = fit_coefficients(self.model, obs, pose, noise_var=1e-10)
        assert not low
        assert np.allclose(coef.alpha, alpha, atol=1e-6)

    def test_zero_visible_gives_prior_mean(self):
        obs, pose = self._observe(np.array([1.0, 1.0]), visible=np.zeros(14, bool))
        coef, low = fit_coefficients(self.model, obs, pose)
        assert low
        assert np.allclose(coef.alpha, 0.0)

    def test_large_noise_shrinks_to_zero(self):
        alpha = np.array([0.9, 0.4])
        obs, pose = self._observe(alpha)
        coef, _ = fit_coefficients(self.model, obs, pose, noise_var=1e12)
        assert np.linalg.norm(coef.alpha) < 1e-3


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(36)
        mean, basis = toy_true_model(4, rng)
        model = MorphableModel(mean=mean.reshape(-1), basis=basis.reshape(4, -1))
        path = tmp_path / "model.txt"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.K == model.K and loaded.n_basis == model.n_basis
        assert np.array_equal(loaded.mean, model.mean)
        assert np.array_equal(loaded.basis, model.basis)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("14 2\n1 2 3\n")
        with pytest.raises(ValueError):
            load_model(path)

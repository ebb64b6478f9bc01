import numpy as np
import pytest

from dmdbench.algorithms import (
    EmptyData,
    RankDeficient,
    RankExceedsData,
    SingularBackwardOperator,
    SnapshotPairs,
    SquareRootBranchFailure,
    conjugate_closed,
    exact_dmd,
    fb_dmd,
    load_model,
    make_pairs,
    model_from_dict,
    model_to_dict,
    opt_dmd,
    reconstruct,
    save_model,
    tls_dmd,
)
from dmdbench.observables import build_basis, linear_observable
from dmdbench.systems import NoiseSpec, SystemSpec, build_system, simulate

from conftest import STD_PAIR, STD_REAL, spectra_match


def sim(system, n, length, seed=0, sigma_s=0.0, sigma_m=0.0):
    return simulate(
        system, linear_observable(system.dim), NoiseSpec(sigma_s, sigma_m, seed), n, length
    )


class TestMakePairs:
    def test_many_short_trajectories(self, std_system):
        pairs = make_pairs(sim(std_system, 50, 2))
        assert pairs.n_pairs == 50

    def test_two_long_trajectories(self, std_system):
        pairs = make_pairs(sim(std_system, 2, 50))
        assert pairs.n_pairs == 98

    def test_single_lifted_pair(self, std_system, std_spec):
        basis = build_basis(std_spec.spectrum, 2)
        pairs = make_pairs(sim(std_system, 1, 2), basis)
        assert pairs.X.shape == (9, 1)

    def test_pairs_never_cross_boundaries(self, std_system):
        data = sim(std_system, 3, 4, seed=5, sigma_s=0.05)
        pairs = make_pairs(data)
        # columns 0..2 belong to trajectory 0, 3..5 to trajectory 1, ...
        for t in range(3):
            for k in range(3):
                col = t * 3 + k
                assert np.array_equal(pairs.X[:, col], data.observations[t, k])
                assert np.array_equal(pairs.Xp[:, col], data.observations[t, k + 1])

    def test_length_one_rejected(self, std_system):
        data = sim(std_system, 2, 2)
        short = data.observations[:, :1, :]
        from dmdbench.systems import TrajectorySet

        with pytest.raises(EmptyData):
            make_pairs(TrajectorySet(short, None, {}))


class TestExactDmd:
    def test_noiseless_recovery(self, std_system, clean_trajectory):
        model = exact_dmd(make_pairs(clean_trajectory), rank=3)
        assert spectra_match(model.eigenvalues, std_system.spectrum, 1e-8)

    def test_constant_data_single_unit_eigenvalue(self):
        x = np.array([[1.0], [2.0], [3.0]])
        pairs = SnapshotPairs(X=np.tile(x, 5), Xp=np.tile(x, 5))
        model = exact_dmd(pairs)
        assert model.rank == 1
        assert model.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)

    def test_lifted_data_recovers_multiplier_lattice(self, std_system, std_spec):
        basis = build_basis(std_spec.spectrum, 2)
        data = sim(std_system, 10, 10, seed=4)
        model = exact_dmd(make_pairs(data, basis), rank=9)
        assert spectra_match(model.eigenvalues, basis.multipliers, 1e-6)

    def test_modes_are_exact_eigenvectors(self, std_system):
        # Columns of the mode matrix satisfy (Xp X^+) phi = lambda phi even on
        # noisy data.
        data = sim(std_system, 10, 10, seed=9, sigma_s=0.05, sigma_m=0.05)
        pairs = make_pairs(data)
        model = exact_dmd(pairs)
        A_full = pairs.Xp @ np.linalg.pinv(pairs.X)
        for j, lam in enumerate(model.eigenvalues):
            phi = model.modes[:, j]
            assert np.linalg.norm(A_full @ phi - lam * phi) <= 1e-6 * np.linalg.norm(phi)

    def test_conjugate_closed_on_real_data(self, std_system):
        data = sim(std_system, 10, 10, seed=2, sigma_s=0.05, sigma_m=0.05)
        model = exact_dmd(make_pairs(data))
        assert model.conjugate_closed

    def test_kappa_estimate_matches_system_on_clean_data(self, std_system, clean_trajectory):
        model = exact_dmd(make_pairs(clean_trajectory), rank=3)
        assert model.kappa_est == pytest.approx(std_system.kappa, rel=0.1)

    def test_rank_deficient_error(self):
        pairs = SnapshotPairs(X=np.zeros((3, 4)), Xp=np.zeros((3, 4)))
        with pytest.raises(RankDeficient):
            exact_dmd(pairs)

    def test_requested_rank_above_data_rank(self, std_system):
        pairs = make_pairs(sim(std_system, 1, 5))
        with pytest.raises(RankDeficient):
            exact_dmd(pairs, rank=7)

    def test_rank_monotone_reconstruction(self, std_system):
        data = sim(std_system, 1, 40, seed=6)
        pairs = make_pairs(data)
        errors = []
        for r in (1, 2, 3):
            model = exact_dmd(pairs, rank=r, amplitudes="lstsq")
            recon = reconstruct(model, pairs.n_pairs)
            errors.append(np.linalg.norm(recon - pairs.X))
        assert errors[0] >= errors[1] >= errors[2]
        assert errors[2] < 1e-8


class TestFbDmd:
    def test_matches_exact_on_clean_data(self, std_system, clean_trajectory):
        pairs = make_pairs(clean_trajectory)
        reference = exact_dmd(pairs, rank=3)
        model = fb_dmd(pairs, rank=3)
        assert spectra_match(model.eigenvalues, reference.eigenvalues, 1e-8)

    def test_positive_spectrum_square_root_is_identity_average(self):
        # With backward = forward^-1 exactly, sqrt(F F) must return F.
        system = build_system(SystemSpec(reals=(0.9, 0.5, 0.3)))
        model = fb_dmd(make_pairs(sim(system, 1, 12)), rank=3)
        assert spectra_match(model.eigenvalues, system.spectrum, 1e-8)

    def test_branch_failure_on_pure_rotation(self):
        # lambda = +/- 0.9i makes the forward/backward product's spectrum
        # land on the negative real axis.
        system = build_system(SystemSpec(pairs=((0.0, 0.9),)))
        pairs = make_pairs(sim(system, 1, 6))
        with pytest.raises(SquareRootBranchFailure):
            fb_dmd(pairs)

    def test_singular_backward_operator(self):
        X = np.random.default_rng(0).normal(size=(3, 6))
        pairs = SnapshotPairs(X=X, Xp=np.zeros_like(X))
        with pytest.raises(SingularBackwardOperator):
            fb_dmd(pairs)


class TestTlsDmd:
    def test_matches_exact_on_clean_data(self, std_system, clean_trajectory):
        pairs = make_pairs(clean_trajectory)
        reference = exact_dmd(pairs, rank=3)
        model = tls_dmd(pairs, rank=3)
        assert spectra_match(model.eigenvalues, reference.eigenvalues, 1e-8)

    def test_underdetermined_stacking_rejected(self, std_system):
        pairs = make_pairs(sim(std_system, 1, 2, seed=1, sigma_s=0.05))
        with pytest.raises(RankDeficient):
            tls_dmd(pairs)

    def test_reduces_measurement_noise_bias(self, std_system, std_spec):
        # Mean real-mode estimate across a small ensemble should sit closer
        # to the truth than the plain fit's.
        exact_est, tls_est = [], []
        for seed in range(60):
            data = sim(std_system, 10, 10, seed=3000 + seed, sigma_m=0.05)
            pairs = make_pairs(data)
            for fit, sink in ((exact_dmd, exact_est), (tls_dmd, tls_est)):
                model = fit(pairs)
                reals = [z.real for z in model.eigenvalues if abs(z.imag) < 1e-9]
                if len(reals) == 1:
                    sink.append(reals[0])
        bias_exact = abs(np.mean(exact_est) - STD_REAL)
        bias_tls = abs(np.mean(tls_est) - STD_REAL)
        assert bias_tls < bias_exact


class TestOptDmd:
    def test_noiseless_recovery(self, std_system, clean_trajectory):
        model = opt_dmd(clean_trajectory, rank=3)
        assert spectra_match(model.eigenvalues, std_system.spectrum, 1e-6)
        assert model.diagnostics["converged"]

    def test_true_initialization_takes_no_steps(self, std_system, clean_trajectory):
        model = opt_dmd(clean_trajectory, rank=3, init=std_system.spectrum)
        assert model.diagnostics["iterations"] == 0
        assert model.diagnostics["converged"]
        assert spectra_match(model.eigenvalues, std_system.spectrum, 1e-10)

    def test_objective_never_increases(self, std_system):
        data = sim(std_system, 1, 30, seed=17, sigma_s=0.05, sigma_m=0.05)
        model = opt_dmd(data, rank=3)
        history = model.diagnostics["objective_history"]
        assert all(b <= a for a, b in zip(history, history[1:]))

    def test_multi_trajectory_rejected(self, std_system):
        with pytest.raises(ValueError):
            opt_dmd(sim(std_system, 2, 10))

    def test_rank_exceeding_snapshots_rejected(self, std_system):
        with pytest.raises(RankExceedsData):
            opt_dmd(sim(std_system, 1, 5), rank=9)

    def test_unit_norm_modes(self, std_system):
        data = sim(std_system, 1, 30, seed=19, sigma_m=0.02)
        model = opt_dmd(data, rank=3)
        norms = np.linalg.norm(model.modes, axis=0)
        assert norms == pytest.approx(np.ones(3), abs=1e-12)

    def test_lifted_single_trajectory(self, std_system, std_spec):
        basis = build_basis(std_spec.spectrum, 2)
        model = opt_dmd(sim(std_system, 1, 50, seed=23), rank=9, lifting=basis)
        assert spectra_match(model.eigenvalues, basis.multipliers, 1e-5)


class TestReconstruct:
    def test_first_column_is_first_snapshot(self, clean_trajectory):
        pairs = make_pairs(clean_trajectory)
        model = exact_dmd(pairs, rank=3)
        recon = reconstruct(model, 1)
        assert np.allclose(recon[:, 0], pairs.X[:, 0], atol=1e-10)

    def test_noiseless_window_error_small(self, clean_trajectory):
        pairs = make_pairs(clean_trajectory)
        model = exact_dmd(pairs, rank=3)
        recon = reconstruct(model, pairs.n_pairs)
        assert np.linalg.norm(recon - pairs.X) < 1e-8

    def test_stable_models_decay(self, clean_trajectory):
        model = exact_dmd(make_pairs(clean_trajectory), rank=3)
        recon = reconstruct(model, 400)
        assert np.linalg.norm(recon[:, -1]) < 1e-5

    def test_all_algorithms_agree_on_clean_data(self, std_system, clean_trajectory):
        pairs = make_pairs(clean_trajectory)
        models = [
            exact_dmd(pairs, rank=3),
            fb_dmd(pairs, rank=3),
            tls_dmd(pairs, rank=3),
            opt_dmd(clean_trajectory, rank=3),
        ]
        for model in models:
            assert spectra_match(model.eigenvalues, std_system.spectrum, 1e-6)


class TestConjugateClosure:
    def test_closed_spectrum(self):
        assert conjugate_closed([0.4 + 0.2j, 0.4 - 0.2j, 0.8])

    def test_open_spectrum(self):
        assert not conjugate_closed([0.4 + 0.2j, 0.5 - 0.2j, 0.8])

    def test_tolerates_tiny_asymmetry(self):
        assert conjugate_closed([0.4 + 0.2j, 0.4 - 0.2j + 1e-12j, 0.8])


class TestModelSerialization:
    def test_json_round_trip(self, clean_trajectory, tmp_path):
        model = exact_dmd(make_pairs(clean_trajectory), rank=3)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.algorithm == model.algorithm
        assert loaded.rank == model.rank
        assert np.allclose(loaded.eigenvalues, model.eigenvalues)
        assert np.allclose(loaded.modes, model.modes)
        assert np.allclose(loaded.amplitudes, model.amplitudes)
        assert loaded.kappa_est == pytest.approx(model.kappa_est)

    def test_dict_round_trip_preserves_flags(self, std_system):
        data = sim(std_system, 1, 20, seed=31, sigma_m=0.05)
        model = opt_dmd(data, rank=3)
        clone = model_from_dict(model_to_dict(model))
        assert clone.conjugate_closed == model.conjugate_closed
        assert clone.diagnostics["converged"] == model.diagnostics["converged"]

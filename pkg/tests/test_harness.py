import json
import math

import numpy as np
import pytest

from dmdbench.cli import main
from dmdbench.harness import (
    SchemaError,
    derive_trial_seed,
    enumerate_cells,
    load_config,
    preset_from_config,
    run_preset,
)
from dmdbench.presets import BUILTIN_CONFIGS

from conftest import STD_PAIR, STD_REAL


def minimal_config(**overrides):
    cfg = {
        "name": "unit",
        "system": {"pairs": [list(STD_PAIR)], "reals": [STD_REAL]},
        "observable": "linear",
        "lifting_order": 1,
        "dataset_shapes": [[5, 4]],
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact"],
        "batch_size": 20,
        "kl_threshold": 0.05,
        "max_batches": 3,
        "grid": {"resolution": 0.1, "sigma": 0.02},
    }
    cfg.update(overrides)
    return cfg


class TestLoadConfig:
    def test_builtin_cond_sweep_matches_study_grid(self):
        preset = load_config("paper-cond-sweep")
        thetas = sorted({gp.spec.theta for gp in preset.grid_points})
        phis = sorted({gp.spec.phi for gp in preset.grid_points})
        ss = sorted({gp.spec.s for gp in preset.grid_points})
        assert thetas == [0.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.52, 1.53, 1.560]
        assert phis == [0.0, 0.79, math.pi / 2]
        assert ss == [0.1, 0.5, 1.0]
        assert len(preset.grid_points) == 81
        assert preset.dataset_shapes == ((50, 2), (10, 10), (2, 50))
        assert preset.batch_size == 300
        assert preset.kl_threshold == 0.001
        for gp in preset.grid_points:
            assert gp.spec.pairs == (STD_PAIR,)
            assert gp.spec.reals == (STD_REAL,)

    def test_builtin_eig_sweep_varies_real_eigenvalue(self):
        preset = load_config("paper-eig-sweep")
        reals = [gp.spec.reals[0] for gp in preset.grid_points]
        assert reals[0] == 0.01
        assert reals[-1] == 1.0
        assert all(gp.spec.theta == 0.0 and gp.spec.s == 1.0 for gp in preset.grid_points)

    def test_all_builtins_validate(self):
        for name in BUILTIN_CONFIGS:
            preset = load_config(name)
            assert preset.grid_points

    def test_config_file_round_trip(self, tmp_path):
        path = tmp_path / "preset.json"
        path.write_text(json.dumps(minimal_config()))
        preset = load_config(path)
        assert preset.name == "unit"
        assert preset.grid_points[0].spec.reals == (STD_REAL,)

    def test_zero_s_rejected(self, tmp_path):
        cfg = minimal_config()
        cfg["system"]["s"] = 0.0
        with pytest.raises(SchemaError, match="s"):
            preset_from_config(cfg)

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(SchemaError, match="mystery"):
            preset_from_config(minimal_config(mystery=1))

    def test_unknown_system_key_rejected(self):
        cfg = minimal_config()
        cfg["system"]["surprise"] = 2
        with pytest.raises(SchemaError, match="system.surprise"):
            preset_from_config(cfg)

    def test_bad_shape_rejected(self):
        with pytest.raises(SchemaError, match="dataset_shapes"):
            preset_from_config(minimal_config(dataset_shapes=[[5, 1]]))

    def test_bad_algorithm_rejected(self):
        with pytest.raises(SchemaError, match="algorithms"):
            preset_from_config(minimal_config(algorithms=["newton"]))

    def test_singular_theta_rejected(self):
        cfg = minimal_config()
        cfg["system"]["theta"] = math.pi / 2
        with pytest.raises(SchemaError, match="theta"):
            preset_from_config(cfg)

    def test_missing_preset_name(self):
        with pytest.raises(SchemaError):
            load_config("no-such-preset")


class TestCells:
    def test_cell_count_is_grid_times_shapes_times_algorithms(self):
        cfg = minimal_config(
            algorithms=["exact", "tls"], dataset_shapes=[[5, 4], [2, 10]]
        )
        cfg["system"]["theta"] = [0.0, 1.2]
        preset = preset_from_config(cfg)
        assert len(enumerate_cells(preset)) == 2 * 2 * 2

    def test_opt_cells_warn_about_single_trajectory(self):
        preset = preset_from_config(
            minimal_config(algorithms=["opt"], dataset_shapes=[[50, 2]])
        )
        cell = enumerate_cells(preset)[0]
        assert any("single trajectory" in w for w in cell.warnings)

    def test_lifted_preset_targets_multiplier_lattice(self):
        cfg = minimal_config(observable="coupled-quadratic", lifting_order=2)
        preset = preset_from_config(cfg)
        cell = enumerate_cells(preset)[0]
        assert len(cell.truth) == 9
        assert all(abs(z) <= 1.0 + 1e-12 for z in cell.truth)

    def test_trial_seeds_are_distinct_and_stable(self):
        seeds = {
            derive_trial_seed(7, g, s, alg, t)
            for g in range(2)
            for s in range(2)
            for alg in ("exact", "fb")
            for t in range(5)
        }
        assert len(seeds) == 40
        assert derive_trial_seed(7, 0, 0, "exact", 0) == derive_trial_seed(
            7, 0, 0, "exact", 0
        )


class TestRunPreset:
    def test_noiseless_smoke_has_zero_std(self, tmp_path):
        preset = load_config("smoke-noiseless")
        manifest = run_preset(preset, master_seed=1, out_dir=tmp_path)
        stats = (tmp_path / "binstats.csv").read_text().strip().splitlines()
        rows = [line.split(",") for line in stats[1:]]
        stds = [float(r[11]) for r in rows]
        assert stds == pytest.approx([0.0] * len(stds), abs=1e-10)
        assert not manifest.payload["failed_cells"]

    def test_emits_one_density_csv_per_cell(self, tmp_path):
        cfg = minimal_config(dataset_shapes=[[5, 4], [2, 10]], max_batches=1)
        cfg["system"]["theta"] = [0.0, 1.1]
        preset = preset_from_config(cfg)
        run_preset(preset, master_seed=0, out_dir=tmp_path, max_batches=1)
        densities = sorted(tmp_path.glob("*_density.csv"))
        assert len(densities) == 4

    def test_manifest_files_exist_and_hash_match(self, tmp_path):
        import hashlib

        preset = load_config("smoke-noiseless")
        manifest = run_preset(preset, master_seed=2, out_dir=tmp_path)
        for entry in manifest.payload["files"]:
            path = tmp_path / entry["path"]
            assert path.exists()
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            assert digest == entry["sha256"]

    def test_rerun_with_same_seed_is_byte_identical(self, tmp_path):
        preset = preset_from_config(minimal_config())
        m1 = run_preset(preset, master_seed=9, out_dir=tmp_path / "a")
        m2 = run_preset(preset, master_seed=9, out_dir=tmp_path / "b")
        h1 = {f["path"]: f["sha256"] for f in m1.payload["files"]}
        h2 = {f["path"]: f["sha256"] for f in m2.payload["files"]}
        assert h1 == h2

    def test_different_seed_changes_output(self, tmp_path):
        preset = preset_from_config(minimal_config())
        m1 = run_preset(preset, master_seed=1, out_dir=tmp_path / "a")
        m2 = run_preset(preset, master_seed=2, out_dir=tmp_path / "b")
        h1 = {f["path"]: f["sha256"] for f in m1.payload["files"] if "density" in f["path"]}
        h2 = {f["path"]: f["sha256"] for f in m2.payload["files"] if "density" in f["path"]}
        assert h1 != h2

    def test_density_metadata_records_cell(self, tmp_path):
        preset = preset_from_config(minimal_config())
        run_preset(preset, master_seed=0, out_dir=tmp_path)
        meta = json.loads(next(tmp_path.glob("*_density.json")).read_text())
        assert meta["algorithm"] == "exact"
        assert meta["kappa_A"] == pytest.approx(1.6)
        assert len(meta["truth"]) == 3


class TestCli:
    def test_simulate_then_fit(self, tmp_path):
        traj = tmp_path / "traj.csv"
        assert main([
            "simulate", "--config", "smoke-noiseless", "--seed", "3",
            "--out", str(traj),
        ]) == 0
        model_path = tmp_path / "model.json"
        assert main([
            "fit", "--input", str(traj), "--algorithm", "exact",
            "--out", str(model_path),
        ]) == 0
        payload = json.loads(model_path.read_text())
        eigs = [complex(re, im) for re, im in payload["eigenvalues"]]
        truth = [complex(*STD_PAIR), complex(STD_PAIR[0], -STD_PAIR[1]), STD_REAL + 0j]
        key = lambda z: (z.real, z.imag)
        assert np.allclose(sorted(eigs, key=key), sorted(truth, key=key), atol=1e-8)

    def test_sweep_and_report(self, tmp_path, capsys):
        out = tmp_path / "run"
        assert main([
            "sweep", "--config", "smoke-noiseless", "--seed", "1",
            "--out", str(out),
        ]) == 0
        assert (out / "manifest.json").exists()
        merged = tmp_path / "merged.csv"
        assert main(["report", str(out), "--out", str(merged)]) == 0
        captured = capsys.readouterr().out
        assert "smoke-noiseless" in captured
        assert merged.exists()

    def test_sweep_with_batch_override(self, tmp_path):
        out = tmp_path / "run"
        assert main([
            "sweep", "--config", "smoke-noiseless", "--seed", "1",
            "--out", str(out), "--batches", "1",
        ]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert all(c["batches"] == 1 for c in manifest["cells"])

    def test_bad_config_returns_schema_error_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(minimal_config(mystery=1)))
        assert main(["sweep", "--config", str(bad)]) == 2

    def test_fit_opt_uses_first_trajectory(self, tmp_path, capsys):
        traj = tmp_path / "traj.csv"
        main(["simulate", "--config", "smoke-noiseless", "--out", str(traj)])
        assert main([
            "fit", "--input", str(traj), "--algorithm", "opt",
            "--out", str(tmp_path / "m.json"),
        ]) == 0
        assert "first" in capsys.readouterr().err

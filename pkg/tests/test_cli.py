import json
from pathlib import Path

import numpy as np
import pytest

from landscaper import cli
from landscaper.derived import CurvePair
from landscaper.inference import FitConfig, HYPER_NAMES, Posterior
from landscaper.tsdata import dump_json, load_json


def run(args):
    return cli.main([str(a) for a in args])


def read_bytes(path):
    return Path(path).read_bytes()


def simulate_args(out, seed=11, n=30, points=3, dt=0.1):
    return ["simulate", "--model", "cusp", "--alpha", 0, "--beta", 1, "--lam", 0,
            "--r", 1, "--epsilon", 0.5, "--n-series", n, "--points", points,
            "--dt", dt, "--seed", seed, "--out", out]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run(simulate_args(out)) == 0
    return out


def synthetic_posterior(bistable: bool, n_draws=40) -> Posterior:
    grid = np.linspace(-2.4, 2.4, 200)
    rng = np.random.default_rng(8)
    if bistable:
        base = grid - grid**3
    else:
        base = -grid
    drift = base + 0.02 * rng.standard_normal((n_draws, grid.size))
    diffusion = 0.5 + 0.05 * rng.random((n_draws, grid.size))
    return Posterior(
        grid=grid,
        drift_draws=drift,
        diffusion_draws=diffusion,
        hyper_draws=np.abs(rng.standard_normal((n_draws, 6))) + 0.1,
        hyper_names=HYPER_NAMES,
        diagnostics={"rhat": {n: 1.0 for n in HYPER_NAMES},
                     "ess": {n: float(n_draws) for n in HYPER_NAMES}},
        divergences=0,
        converged=True,
        anchors=np.linspace(-2.4, 2.4, 30),
        center=0.0,
        data_range=(-2.2, 2.2),
        config=FitConfig(),
    )


class TestSimulate:
    def test_row_count(self, dataset):
        lines = (dataset / "dataset.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 30 * 3  # header + rows

    def test_truth_sidecar(self, dataset):
        truth = load_json(dataset / "dataset_truth.json")
        assert truth["model"] == "cusp"
        assert truth["label"] == 2
        assert truth["seed"] == 11

    def test_seeded_repeat_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(simulate_args(a)) == 0
        assert run(simulate_args(b)) == 0
        assert read_bytes(a / "dataset.csv") == read_bytes(b / "dataset.csv")
        assert read_bytes(a / "dataset_truth.json") == read_bytes(b / "dataset_truth.json")

    def test_unknown_model_is_parse_error(self, tmp_path, capsys):
        args = simulate_args(tmp_path / "x")
        args[2] = "wiggle"
        assert run(args) == cli.EXIT_PARSE
        assert "wiggle" in capsys.readouterr().err

    def test_dt_frac_resolves_step(self, tmp_path):
        out = tmp_path / "frac"
        args = simulate_args(out)
        i = args.index("--dt")
        args[i : i + 2] = ["--dt-frac", "0.01"]
        assert run(args) == 0
        truth = load_json(out / "dataset_truth.json")
        assert truth["dt_target"] > 0.01


class TestFit:
    @pytest.fixture(scope="class")
    def fitted(self, dataset, tmp_path_factory):
        out = tmp_path_factory.mktemp("fit")
        cfg = tmp_path_factory.mktemp("cfg") / "cfg.json"
        dump_json({"n_chains": 2, "n_iterations": 200, "max_leapfrog": 8}, cfg)
        code = run(["fit", "--data", dataset / "dataset.csv", "--config", cfg,
                    "--seed", 3, "--threads", 1, "--allow-nonconverged", "--out", out])
        assert code == 0
        return out

    def test_outputs_present(self, fitted):
        for name in ("posterior.json", "summary.csv", "diagnostics.csv", "manifest.json"):
            assert (fitted / name).exists()

    def test_diagnostics_table_has_hypers(self, fitted):
        text = (fitted / "diagnostics.csv").read_text()
        for name in HYPER_NAMES:
            assert name in text

    def test_malformed_csv_names_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("unit_id,time,value\na,0,1\na,nope,2\n")
        code = run(["fit", "--data", bad, "--out", tmp_path / "o"])
        assert code == cli.EXIT_PARSE
        assert "line 3" in capsys.readouterr().err

    def test_too_few_transitions_precondition(self, tmp_path, capsys):
        small = tmp_path / "small.csv"
        small.write_text("unit_id,time,value\na,0,1.0\na,1,2.0\n")
        code = run(["fit", "--data", small, "--out", tmp_path / "o2"])
        assert code == cli.EXIT_PRECONDITION

    def test_max_dt_reduces_transitions(self, tmp_path, dataset):
        cfg = tmp_path / "cfg.json"
        dump_json({"n_chains": 2, "n_iterations": 100, "max_leapfrog": 4}, cfg)
        out1 = tmp_path / "full"
        out2 = tmp_path / "filtered"
        data = tmp_path / "gappy.csv"
        rows = ["unit_id,time,value"]
        rng = np.random.default_rng(0)
        for u in range(12):
            # middle gap of 10 time units splits each series
            for t in (0.0, 0.5, 1.0, 11.0, 11.5, 12.0):
                rows.append(f"u{u},{t},{rng.normal():.6f}")
        data.write_text("\n".join(rows) + "\n")
        assert run(["fit", "--data", data, "--config", cfg, "--allow-nonconverged",
                    "--out", out1]) == 0
        assert run(["fit", "--data", data, "--config", cfg, "--allow-nonconverged",
                    "--max-dt", 5.0, "--out", out2]) == 0
        m1 = load_json(out1 / "manifest.json")
        m2 = load_json(out2 / "manifest.json")
        # 12 series x 5 transitions unfiltered; the gap removes one per series
        assert m1["details"]["n_transitions"] == 60
        assert m2["details"]["n_transitions"] == 48
        assert m2["config_hash"] != m1["config_hash"]

    def test_nonconverged_exit_code(self, monkeypatch, tmp_path, dataset):
        fake = synthetic_posterior(bistable=True)
        object.__setattr__(fake, "converged", False)
        monkeypatch.setattr(cli, "fit", lambda c, cfg: fake)
        out = tmp_path / "nc"
        code = run(["fit", "--data", dataset / "dataset.csv", "--out", out])
        assert code == cli.EXIT_CONVERGENCE
        code = run(["fit", "--data", dataset / "dataset.csv",
                    "--allow-nonconverged", "--out", out])
        assert code == 0


class TestWideCsvAndClr:
    def make_wide(self, path):
        rows = ["unit_id,time,taxa_a,taxa_b,taxa_c"]
        rng = np.random.default_rng(5)
        for u in range(8):
            for t in range(4):
                a, b, c = rng.uniform(1, 10, 3)
                rows.append(f"u{u},{t},{a:.4f},{b:.4f},{c:.4f}")
        Path(path).write_text("\n".join(rows) + "\n")

    def test_clr_requires_column(self, tmp_path, capsys):
        wide = tmp_path / "wide.csv"
        self.make_wide(wide)
        code = run(["fit", "--data", wide, "--clr", "--out", tmp_path / "o"])
        assert code == cli.EXIT_PRECONDITION

    def test_clr_column_fit(self, tmp_path):
        wide = tmp_path / "wide.csv"
        self.make_wide(wide)
        cfg = tmp_path / "cfg.json"
        dump_json({"n_chains": 2, "n_iterations": 100, "max_leapfrog": 4}, cfg)
        code = run(["fit", "--data", wide, "--clr", "--column", "taxa_b",
                    "--config", cfg, "--allow-nonconverged", "--out", tmp_path / "o"])
        assert code == 0

    def test_missing_column_is_parse_error(self, tmp_path, capsys):
        wide = tmp_path / "wide.csv"
        self.make_wide(wide)
        code = run(["fit", "--data", wide, "--column", "nope", "--out", tmp_path / "o"])
        assert code == cli.EXIT_PARSE


class TestDerive:
    def test_bistable_posterior_full_bundle(self, tmp_path):
        post_path = tmp_path / "posterior.json"
        dump_json(synthetic_posterior(bistable=True).to_json(), post_path)
        out = tmp_path / "bundle"
        assert run(["derive", "--posterior", post_path, "--out", out]) == 0
        for name in ("stationary_density", "potential", "effective_potential",
                     "multistability", "tipping_region", "exit_time_band"):
            assert (out / f"{name}.csv").exists(), name
            assert (out / f"{name}.json").exists(), name

    def test_unistable_posterior_skips_band_with_notice(self, tmp_path):
        post_path = tmp_path / "posterior.json"
        dump_json(synthetic_posterior(bistable=False).to_json(), post_path)
        out = tmp_path / "bundle"
        assert run(["derive", "--posterior", post_path, "--out", out]) == 0
        assert (out / "exit_time_band_notice.json").exists()
        assert not (out / "exit_time_band.csv").exists()
        assert (out / "stationary_density.csv").exists()

    def test_rerun_identical(self, tmp_path):
        post_path = tmp_path / "posterior.json"
        dump_json(synthetic_posterior(bistable=True).to_json(), post_path)
        out1, out2 = tmp_path / "b1", tmp_path / "b2"
        assert run(["derive", "--posterior", post_path, "--out", out1]) == 0
        assert run(["derive", "--posterior", post_path, "--out", out2]) == 0
        for f in sorted(out1.iterdir()):
            if f.name == "manifest.json":
                continue
            assert read_bytes(f) == read_bytes(out2 / f.name), f.name


class TestExperimentCommand:
    def test_coverage_csv(self, tmp_path):
        cfg = tmp_path / "exp.json"
        dump_json({"model": {"name": "cusp", "alpha": 0, "beta": 1, "lam": 0,
                             "r": 1, "epsilon": 0.5},
                   "total_time": 20, "replicates": 1, "seed": 4}, cfg)
        out = tmp_path / "cov"
        assert run(["experiment", "--name", "coverage", "--config", cfg, "--out", out]) == 0
        header = (out / "coverage.csv").read_text().splitlines()[0]
        assert header == "budget,agreement_short,agreement_long"

    def test_tpr_grid_matrix(self, tmp_path):
        cfg = tmp_path / "exp.json"
        dump_json({"model": {"name": "cusp", "alpha": 0, "beta": 1, "lam": 0,
                             "r": 1, "epsilon": 0.5},
                   "series_counts": [12, 15], "timesteps": [0.1, 0.05],
                   "replicates": 2, "seed": 4,
                   "fit": {"n_chains": 2, "n_iterations": 150, "max_leapfrog": 8}}, cfg)
        out = tmp_path / "tpr"
        assert run(["experiment", "--name", "tpr-grid", "--config", cfg, "--out", out]) == 0
        lines = (out / "tpr.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + 2 series-count rows
        assert len(lines[1].split(",")) == 3  # n_series + 2 timestep columns

    def test_unknown_name_usage_error(self, tmp_path):
        cfg = tmp_path / "exp.json"
        dump_json({"model": {"name": "cusp"}}, cfg)
        assert run(["experiment", "--name", "nope", "--config", cfg,
                    "--out", tmp_path / "x"]) == cli.EXIT_PARSE


class TestReplayAndThreads:
    def test_replay_byte_identical(self, tmp_path):
        out1 = tmp_path / "r1"
        assert run(simulate_args(out1, seed=77)) == 0
        out2 = tmp_path / "r2"
        assert run(["replay", "--manifest", out1 / "manifest.json", "--out", out2]) == 0
        assert read_bytes(out1 / "dataset.csv") == read_bytes(out2 / "dataset.csv")
        m1 = load_json(out1 / "manifest.json")
        m2 = load_json(out2 / "manifest.json")
        assert m1["outputs"] == m2["outputs"]

    def test_fit_outputs_independent_of_threads(self, tmp_path, dataset):
        cfg = tmp_path / "cfg.json"
        dump_json({"n_chains": 2, "n_iterations": 150, "max_leapfrog": 8}, cfg)
        outs = []
        for threads in (1, 3):
            out = tmp_path / f"t{threads}"
            assert run(["fit", "--data", dataset / "dataset.csv", "--config", cfg,
                        "--seed", 2, "--threads", threads, "--allow-nonconverged",
                        "--out", out]) == 0
            outs.append(out)
        assert read_bytes(outs[0] / "posterior.json") == read_bytes(outs[1] / "posterior.json")
        assert read_bytes(outs[0] / "summary.csv") == read_bytes(outs[1] / "summary.csv")

    def test_env_var_threads(self, tmp_path, dataset, monkeypatch):
        monkeypatch.setenv("LANDSCAPER_THREADS", "2")
        cfg = tmp_path / "cfg.json"
        dump_json({"n_chains": 2, "n_iterations": 120, "max_leapfrog": 8}, cfg)
        out = tmp_path / "env"
        assert run(["fit", "--data", dataset / "dataset.csv", "--config", cfg,
                    "--seed", 2, "--allow-nonconverged", "--out", out]) == 0
        manifest = load_json(out / "manifest.json")
        assert manifest["config_hash"]

import json
import subprocess
import sys

import numpy as np
import pytest

from mimo_uap import attacks, cli, evaluation, nnet, scenario
from mimo_uap.scenario import NetworkConfig

CFG = NetworkConfig(n_cells=2, n_ues_per_cell=2)


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Small end-to-end workspace: config, datasets, victim and surrogate models."""
    root = tmp_path_factory.mktemp("cliwork")
    cfg = root / "net.cfg"
    scenario.save_config(CFG, cfg)
    train = root / "train.ds"
    test = root / "test.ds"
    assert run(["generate", cfg, "--samples", 40, "--seed", 1, "--out", train]) == 0
    assert run(["generate", cfg, "--samples", 10, "--seed", 2, "--out", test]) == 0
    victim = root / "victim.weights"
    surrogate = root / "surrogate.weights"
    assert run(["train", "--data", train, "--config", cfg, "--model", "m1",
                "--cell", 0, "--epochs", 30, "--seed", 3, "--out", victim]) == 0
    assert run(["train", "--data", train, "--config", cfg, "--model", "m2",
                "--cell", 0, "--epochs", 10, "--seed", 4, "--out", surrogate]) == 0
    return {"root": root, "cfg": cfg, "train": train, "test": test,
            "victim": victim, "surrogate": surrogate}


class TestGenerate:
    def test_missing_config_exits_2(self, tmp_path, capsys):
        code = run(["generate", tmp_path / "absent.cfg", "--samples", 1,
                    "--out", tmp_path / "x.ds"])
        assert code == 2
        assert "config" in capsys.readouterr().err

    def test_missing_required_flag_exits_2(self, tmp_path, capsys):
        code = run(["generate", tmp_path / "absent.cfg", "--samples", 1])
        assert code == 2
        assert "usage" in capsys.readouterr().err

    def test_sample_count(self, work):
        ds = evaluation.load_dataset(work["train"])
        assert ds.n_samples == 40

    def test_rerun_is_bitwise_identical(self, work, tmp_path):
        again = tmp_path / "again.ds"
        assert run(["generate", work["cfg"], "--samples", 40, "--seed", 1,
                    "--out", again]) == 0
        assert again.read_bytes() == work["train"].read_bytes()

    def test_manifest_written(self, work):
        manifest = json.loads((work["root"] / "train.ds.manifest.json").read_text())
        assert manifest["stage"] == "generate"
        assert manifest["seed"] == 1
        assert manifest["tool_version"]


class TestTrain:
    def test_m1_architecture(self, work):
        model, scaler = nnet.load_weights(work["victim"])
        assert model.layer_dims == [8, 64, 32, 32, 32, 5, 3]
        assert scaler.scale == CFG.p_max

    def test_m2_architecture(self, work):
        model, _ = nnet.load_weights(work["surrogate"])
        assert model.layer_dims == [8, 512, 256, 128, 128, 5, 3]

    def test_loss_history_rows(self, work):
        lines = (work["root"] / "victim.weights.losses").read_text().splitlines()
        assert len(lines) == 30
        losses = [float(v) for v in lines]
        assert losses[-1] < losses[0]

    def test_bad_cell_exits_2(self, work, tmp_path):
        assert run(["train", "--data", work["train"], "--config", work["cfg"],
                    "--model", "m1", "--cell", 9, "--epochs", 1,
                    "--out", tmp_path / "w"]) == 2

    def test_nonfinite_loss_exits_4(self, work, tmp_path):
        # dataset with absurd input magnitudes overflows the loss immediately
        ds = evaluation.load_dataset(work["train"])
        bad = evaluation.Dataset(inputs=np.full_like(ds.inputs, 1e200),
                                 targets=ds.targets, fingerprint=ds.fingerprint,
                                 seed=ds.seed)
        bad_path = tmp_path / "bad.ds"
        evaluation.save_dataset(bad, bad_path)
        assert run(["train", "--data", bad_path, "--config", work["cfg"],
                    "--model", "m1", "--cell", 0, "--epochs", 1,
                    "--out", tmp_path / "w"]) == 4


class TestAttack:
    def test_black_box_requires_surrogate(self, work, tmp_path, capsys):
        for attack in ("a4", "a6"):
            code = run(["attack", "--victim", work["victim"], "--attack", attack,
                        "--eps", 0.5, "--data", work["train"], "--config", work["cfg"],
                        "--out", tmp_path / "p.txt"])
            assert code == 2
            assert "surrogate" in capsys.readouterr().err

    def test_fgsm_norm_equals_eps(self, work, tmp_path):
        out = tmp_path / "a8.txt"
        assert run(["attack", "--victim", work["victim"], "--attack", "a8",
                    "--eps", 0.3, "--data", work["test"], "--config", work["cfg"],
                    "--cell", 0, "--seed", 5, "--out", out]) == 0
        records = attacks.load_perturbations(out)
        assert len(records) == 10   # one per test sample
        for rec in records:
            assert rec.perturbation.norm_inf == pytest.approx(0.3, abs=1e-15)

    def test_a3_matches_in_process_api(self, work, tmp_path):
        out = tmp_path / "a3.txt"
        assert run(["attack", "--victim", work["victim"], "--attack", "a3",
                    "--eps", 0.5, "--data", work["train"], "--config", work["cfg"],
                    "--cell", 0, "--n-craft", 8, "--trials", 3, "--seed", 6,
                    "--out", out]) == 0
        rec = attacks.load_perturbations(out)[0]
        model, scaler = nnet.load_weights(work["victim"])
        ds = evaluation.load_dataset(work["train"])
        settings = attacks.AttackSettings(epsilon=0.5, n_craft=8, seed=6, i_max=10)
        pert = evaluation.craft_uap("a3", model, scaler, ds.inputs, CFG.p_max,
                                    settings, n_trials=3)
        assert np.array_equal(rec.perturbation.eta, pert.eta)

    def test_a1_single_record(self, work, tmp_path):
        out = tmp_path / "a1.txt"
        assert run(["attack", "--victim", work["victim"], "--attack", "a1",
                    "--eps", 1.0, "--data", work["train"], "--config", work["cfg"],
                    "--seed", 7, "--out", out]) == 0
        records = attacks.load_perturbations(out)
        assert len(records) == 1
        assert records[0].perturbation.norm_inf == 1.0


class TestEvaluate:
    def test_zero_perturbation_row_is_zero(self, work, tmp_path):
        pert_path = tmp_path / "zero.txt"
        attacks.save_perturbations(pert_path, [attacks.PerturbationRecord(
            "a1", 0.0, 0, 0, attacks.Perturbation(np.zeros(8)))])
        out = tmp_path / "report.csv"
        assert run(["evaluate", "--victim", work["victim"], "--test-data", work["test"],
                    "--config", work["cfg"], "--perturbations", pert_path,
                    "--out", out]) == 0
        rows = evaluation.read_report_csv(out)
        assert rows[0]["success_rate"] == 0.0

    def test_header_and_dual_path_rate(self, work, tmp_path):
        pert_path = tmp_path / "a1.txt"
        assert run(["attack", "--victim", work["victim"], "--attack", "a1",
                    "--eps", 0.8, "--data", work["train"], "--config", work["cfg"],
                    "--seed", 8, "--out", pert_path]) == 0
        out = tmp_path / "report.csv"
        assert run(["evaluate", "--victim", work["victim"], "--test-data", work["test"],
                    "--config", work["cfg"], "--perturbations", pert_path,
                    "--out", out]) == 0
        assert out.read_text().splitlines()[0] == ",".join(evaluation.REPORT_HEADER)
        row = evaluation.read_report_csv(out)[0]
        model, scaler = nnet.load_weights(work["victim"])
        ds = evaluation.load_dataset(work["test"])
        mask = evaluation.feasible_mask(model, scaler, ds.inputs, CFG.p_max)
        rec = attacks.load_perturbations(pert_path)[0]
        expected = evaluation.success_rate(model, scaler, ds.inputs[mask],
                                           rec.perturbation, CFG.p_max)
        assert row["success_rate"] == expected
        assert row["seconds"] == 0.0   # deterministic by default

    def test_per_sample_count_mismatch_exits_3(self, work, tmp_path):
        pert_path = tmp_path / "a8train.txt"
        assert run(["attack", "--victim", work["victim"], "--attack", "a8",
                    "--eps", 0.3, "--data", work["train"], "--config", work["cfg"],
                    "--out", pert_path]) == 0
        assert run(["evaluate", "--victim", work["victim"], "--test-data", work["test"],
                    "--config", work["cfg"], "--perturbations", pert_path,
                    "--out", tmp_path / "r.csv"]) == 3

    def test_rerun_bitwise_identical(self, work, tmp_path):
        pert_path = tmp_path / "p.txt"
        assert run(["attack", "--victim", work["victim"], "--attack", "a5",
                    "--eps", 0.5, "--data", work["train"], "--config", work["cfg"],
                    "--n-craft", 8, "--seed", 9, "--out", pert_path]) == 0
        r1, r2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
        for out in (r1, r2):
            assert run(["evaluate", "--victim", work["victim"], "--test-data",
                        work["test"], "--config", work["cfg"],
                        "--perturbations", pert_path, "--out", out]) == 0
        assert r1.read_bytes() == r2.read_bytes()


class TestReport:
    def test_empty_csv_gives_valid_plot_with_warning(self, tmp_path, capsys):
        csv_path = tmp_path / "empty.csv"
        evaluation.write_report_csv(csv_path, [])
        plot_path = tmp_path / "plot.json"
        assert run(["report", "--csv", csv_path, "--out-plot", plot_path]) == 0
        assert "empty" in capsys.readouterr().err
        plot = json.loads(plot_path.read_text())
        assert plot["groups"] == []
        assert "warning" in plot

    def test_one_group_per_attack_and_heights_match(self, tmp_path):
        rows = [
            {"attack_id": "a1", "cell": 0, "epsilon": 0.5, "success_rate": 0.25,
             "seconds": 0.0, "n_craft": 0, "seed": 1},
            {"attack_id": "a8", "cell": 0, "epsilon": 0.5, "success_rate": 0.75,
             "seconds": 0.0, "n_craft": 0, "seed": 1},
            {"attack_id": "a8", "cell": 1, "epsilon": 1.0, "success_rate": 0.9,
             "seconds": 0.0, "n_craft": 0, "seed": 1},
        ]
        csv_path = tmp_path / "r.csv"
        evaluation.write_report_csv(csv_path, rows)
        plot_path = tmp_path / "plot.json"
        assert run(["report", "--csv", csv_path, "--out-plot", plot_path]) == 0
        plot = json.loads(plot_path.read_text())
        assert [g["attack_id"] for g in plot["groups"]] == ["a1", "a8"]
        heights = {(g["attack_id"], b["epsilon"], b["cell"]): b["success_rate"]
                   for g in plot["groups"] for b in g["bars"]}
        for row in rows:
            assert heights[(row["attack_id"], row["epsilon"], row["cell"])] == row["success_rate"]


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "mimo_uap.cli", "--version"],
                              capture_output=True, text=True)
        assert proc.returncode == 0

    def test_help_lists_subcommands(self, capsys):
        assert run(["--help"]) == 0
        out = capsys.readouterr().out
        for sub in ("generate", "train", "attack", "evaluate", "report"):
            assert sub in out

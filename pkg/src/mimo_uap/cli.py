"""Command-line pipeline: generate -> train -> attack -> evaluate -> report.

Stages exchange artifacts through files (dataset binaries, weight binaries,
perturbation text files, CSV reports) so the expensive ones are paid once.
Every stage writes a "<output>.manifest.json" sidecar last, atomically.

Exit codes: 0 success, 2 usage or config error, 3 data/contract violation,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import time

import numpy as np

from . import __version__, attacks, evaluation, maxprod, nnet, scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def write_manifest(stage: str, out_path: str, inputs: list, outputs: list,
                   seed: int, config_path: str | None = None, extra: dict | None = None) -> None:
    """Manifest sidecar; written only after all outputs exist, via rename."""
    for p in outputs:
        if not os.path.exists(p):
            raise CliError(f"output {p} missing at stage completion", EXIT_DATA)
    manifest = {
        "stage": stage,
        "config_path": config_path,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "tool_version": __version__,
    }
    if extra:
        manifest["extra"] = extra
    tmp = out_path + ".manifest.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, out_path + ".manifest.json")


def read_manifest(artifact_path: str) -> dict | None:
    try:
        with open(artifact_path + ".manifest.json", "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


def _load_config(path: str) -> scenario.NetworkConfig:
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}", EXIT_USAGE)
    try:
        return scenario.load_config(path)
    except scenario.ConfigError as exc:
        raise CliError(f"bad config: {exc}", EXIT_USAGE)


def _load_model(path: str) -> tuple[nnet.Mlp, nnet.OutputScaler]:
    try:
        return nnet.load_weights(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load model {path}: {exc}", EXIT_DATA)


def _load_dataset(path: str) -> evaluation.Dataset:
    try:
        return evaluation.load_dataset(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc}", EXIT_DATA)
    except evaluation.DatasetError as exc:
        raise CliError(f"bad dataset {path}: {exc}", EXIT_DATA)


# --- subcommands ---


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    if args.samples < 0:
        raise CliError("--samples must be nonnegative", EXIT_USAGE)
    try:
        ds = evaluation.generate_dataset(config, args.samples, args.seed)
    except maxprod.NonConvergence as exc:
        raise CliError(f"dataset generation failed: {exc}", EXIT_NUMERIC)
    evaluation.save_dataset(ds, args.out)
    write_manifest("generate", args.out, [args.config], [args.out], args.seed,
                   config_path=args.config, extra={"samples": args.samples})
    print(f"wrote {args.samples} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    if ds.n_samples == 0:
        raise CliError("training dataset is empty", EXIT_DATA)
    config = _load_config(args.config)
    n_cells = ds.targets.shape[1]
    if not 0 <= args.cell < n_cells:
        raise CliError(f"--cell must be in [0, {n_cells})", EXIT_USAGE)
    factory = nnet.make_m1 if args.model == "m1" else nnet.make_m2
    model = factory(input_dim=ds.inputs.shape[1], output_dim=ds.targets.shape[2],
                    seed=args.seed)
    settings = nnet.TrainSettings(learning_rate=args.learning_rate,
                                  batch_size=args.batch_size,
                                  epochs=args.epochs, seed=args.seed)
    try:
        trained, history = nnet.train(model, ds.inputs, ds.cell_targets(args.cell), settings)
    except nnet.NonFiniteLoss as exc:
        raise CliError(f"training failed: {exc}", EXIT_NUMERIC)
    scaler = nnet.OutputScaler(scale=config.p_max)
    nnet.save_weights(trained, args.out, scaler)
    losses_path = args.out + ".losses"
    with open(losses_path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{loss!r}\n" for loss in history)
    write_manifest("train", args.out, [args.data, args.config],
                   [args.out, args.out + ".scaler", losses_path], args.seed,
                   config_path=args.config,
                   extra={"model": args.model, "cell": args.cell, "epochs": args.epochs})
    print(f"trained {args.model} for cell {args.cell}: "
          f"loss {history[0]:.3g} -> {history[-1]:.3g}")
    return EXIT_OK


def _craft_settings(args) -> attacks.AttackSettings:
    i_max = {"a2": 30, "a3": 10, "a4": 10, "a7": 200}.get(args.attack, 30)
    return attacks.AttackSettings(epsilon=args.eps, n_craft=args.n_craft,
                                  seed=args.seed, i_max=i_max)


def cmd_attack(args) -> int:
    if args.attack not in attacks.ATTACK_IDS:
        raise CliError(f"unknown attack {args.attack}", EXIT_USAGE)
    if args.attack in attacks.BLACK_BOX_ATTACKS and not args.surrogate:
        raise CliError(f"{args.attack} is a black-box attack and needs --surrogate",
                       EXIT_USAGE)
    if args.eps <= 0:
        raise CliError("--eps must be positive", EXIT_USAGE)
    config = _load_config(args.config)
    victim, victim_scaler = _load_model(args.victim)
    if args.attack in attacks.BLACK_BOX_ATTACKS:
        craft_model, craft_scaler = _load_model(args.surrogate)
    else:
        craft_model, craft_scaler = victim, victim_scaler
    ds = _load_dataset(args.data)
    if ds.inputs.shape[1] != craft_model.input_dim:
        raise CliError("dataset input width does not match the model", EXIT_DATA)
    settings = _craft_settings(args)
    p_max = config.p_max

    start = time.perf_counter()
    records: list[attacks.PerturbationRecord] = []
    if args.attack == "a1":
        pert = attacks.random_perturbation(args.eps, ds.inputs.shape[1], args.seed)
        records.append(attacks.PerturbationRecord(args.attack, args.eps, args.seed,
                                                  args.cell, pert))
    elif args.attack in ("a3", "a4", "a5", "a6"):
        pert = evaluation.craft_uap(args.attack, craft_model, craft_scaler, ds.inputs,
                                    p_max, settings, n_trials=args.trials)
        records.append(attacks.PerturbationRecord(args.attack, args.eps, args.seed,
                                                  args.cell, pert))
    else:
        for x in ds.inputs:
            if args.attack == "a2":
                pert = attacks.min_perturbation(craft_model, craft_scaler, x, p_max,
                                                delta_max=settings.delta_max,
                                                eps_acc=settings.eps_acc,
                                                i_max=settings.i_max)
            elif args.attack == "a7":
                pert = attacks.optimized_attack(craft_model, craft_scaler, x, p_max,
                                                args.eps, i_max=settings.i_max,
                                                adam_lr=settings.adam_lr)
            elif args.attack == "a8":
                pert = attacks.fgsm(craft_model, craft_scaler, x, args.eps)
            else:
                pert = attacks.pgd(craft_model, craft_scaler, x, args.eps,
                                   steps=settings.pgd_steps)
            records.append(attacks.PerturbationRecord(args.attack, args.eps, args.seed,
                                                      args.cell, pert))
    seconds = time.perf_counter() - start

    attacks.save_perturbations(args.out, records)
    inputs = [args.victim, args.data, args.config]
    if args.surrogate:
        inputs.append(args.surrogate)
    write_manifest("attack", args.out, inputs, [args.out], args.seed,
                   config_path=args.config,
                   extra={"attack_id": args.attack, "epsilon": args.eps,
                          "n_craft": args.n_craft, "trials": args.trials,
                          "cell": args.cell, "craft_seconds": seconds})
    print(f"{args.attack}: wrote {len(records)} perturbation(s) to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    victim, scaler = _load_model(args.victim)
    ds = _load_dataset(args.test_data)
    if ds.n_samples == 0:
        raise CliError("test dataset is empty", EXIT_DATA)
    p_max = config.p_max

    rows = []
    for pert_path in args.perturbations:
        if not os.path.exists(pert_path):
            raise CliError(f"perturbation file not found: {pert_path}", EXIT_DATA)
        records = attacks.load_perturbations(pert_path)
        if not records:
            raise CliError(f"{pert_path}: no perturbation records", EXIT_DATA)
        attack_id = records[0].attack_id
        manifest = read_manifest(pert_path)
        extra = (manifest or {}).get("extra", {})
        start = time.perf_counter()
        if attack_id in attacks.PER_SAMPLE_ATTACKS:
            if len(records) != ds.n_samples:
                raise CliError(f"{pert_path}: {len(records)} records for "
                               f"{ds.n_samples} test samples", EXIT_DATA)
            mask = (evaluation.feasible_mask(victim, scaler, ds.inputs, p_max)
                    if args.feasible_only else np.ones(ds.n_samples, dtype=bool))
            if not mask.any():
                raise CliError("no clean-feasible test samples to evaluate", EXIT_DATA)
            inputs = ds.inputs[mask]
            perts = [rec.perturbation for rec, keep in zip(records, mask) if keep]
            if attack_id == "a2":
                rate = evaluation.min_perturbation_success_rate(
                    [p.norm_inf for p in perts], records[0].epsilon)
            else:
                rate = evaluation.per_sample_success_rate(victim, scaler, inputs,
                                                          perts, p_max)
        else:
            mask = (evaluation.feasible_mask(victim, scaler, ds.inputs, p_max)
                    if args.feasible_only else np.ones(ds.n_samples, dtype=bool))
            if not mask.any():
                raise CliError("no clean-feasible test samples to evaluate", EXIT_DATA)
            rate = evaluation.success_rate(victim, scaler, ds.inputs[mask],
                                           records[0].perturbation, p_max)
        seconds = time.perf_counter() - start
        rows.append({"attack_id": attack_id, "cell": records[0].cell,
                     "epsilon": records[0].epsilon, "success_rate": rate,
                     "seconds": (seconds + extra.get("craft_seconds", 0.0)
                                 if args.timed else 0.0),
                     "n_craft": extra.get("n_craft", 0),
                     "seed": records[0].seed})

    evaluation.write_report_csv(args.out, rows)
    write_manifest("evaluate", args.out,
                   [args.victim, args.test_data, args.config, *args.perturbations],
                   [args.out], 0, config_path=args.config)
    print(f"wrote {len(rows)} report row(s) to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not os.path.exists(args.csv):
        raise CliError(f"CSV not found: {args.csv}", EXIT_DATA)
    try:
        rows = evaluation.read_report_csv(args.csv)
    except (evaluation.DatasetError, ValueError, IndexError) as exc:
        raise CliError(f"bad report CSV: {exc}", EXIT_DATA)
    groups: dict[str, list] = {}
    for row in rows:
        groups.setdefault(row["attack_id"], []).append(
            {"epsilon": row["epsilon"], "cell": row["cell"],
             "success_rate": row["success_rate"], "seconds": row["seconds"]})
    plot = {
        "kind": "grouped-bar",
        "title": "Adversarial success rate by attack",
        "x": "attack_id",
        "y": "success_rate",
        "groups": [{"attack_id": aid, "bars": bars} for aid, bars in sorted(groups.items())],
    }
    if not rows:
        plot["warning"] = "report CSV contained no data rows"
        print("warning: empty report CSV", file=sys.stderr)
    with open(args.out_plot, "w", encoding="utf-8") as fh:
        json.dump(plot, fh, indent=2)
        fh.write("\n")
    write_manifest("report", args.out_plot, [args.csv], [args.out_plot], 0)
    print(f"wrote plot description to {args.out_plot}")
    return EXIT_OK


# --- parser ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mimo-uap",
                                     description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a position/power dataset")
    p.add_argument("config", help="network config file (key = value lines)")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a per-cell power regressor")
    p.add_argument("--data", required=True, help="dataset file from 'generate'")
    p.add_argument("--config", required=True)
    p.add_argument("--model", choices=["m1", "m2"], required=True)
    p.add_argument("--cell", type=int, required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="weights file to write")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack", help="craft perturbations against a model")
    p.add_argument("--victim", required=True, help="victim weights file")
    p.add_argument("--surrogate", help="surrogate weights file (a4/a6)")
    p.add_argument("--attack", required=True, choices=list(attacks.ATTACK_IDS))
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--data", required=True,
                   help="dataset whose inputs are the craft pool / attacked samples")
    p.add_argument("--config", required=True)
    p.add_argument("--cell", type=int, default=0)
    p.add_argument("--n-craft", type=int, default=1500)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("evaluate", help="measure success rates on a test set")
    p.add_argument("--victim", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--perturbations", nargs="+", required=True)
    p.add_argument("--out", required=True, help="CSV report path")
    p.add_argument("--timed", action="store_true",
                   help="fill the seconds column (breaks bitwise rerun identity)")
    p.add_argument("--no-feasible-only", dest="feasible_only", action="store_false",
                   help="evaluate on all test samples, not only clean-feasible ones")
    p.set_defaults(fn=cmd_evaluate, feasible_only=True)

    p = sub.add_parser("report", help="turn a report CSV into a plot description")
    p.add_argument("--csv", required=True)
    p.add_argument("--out-plot", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (maxprod.NonConvergence, nnet.NonFiniteLoss) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

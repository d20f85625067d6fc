"""Dataset generation and attack benchmarking.

Dataset files are flat binary, little-endian:

    magic   4s   b"MUDS"
    version u8   1
    n       u32  samples
    L       u32  cells
    K       u32  users per cell
    seed    i64
    sha     32s  fingerprint (sha256 over config fields, seed and n)
    inputs  n*2KL f64 row-major   normalized positions
    targets n*L*(K+1) f64         per-cell powers and their sum, / p_max

Report CSVs carry the columns
attack_id,cell,epsilon,success_rate,seconds,n_craft,seed.
"""

from __future__ import annotations

import csv
import hashlib
import struct
import time
from dataclasses import dataclass, fields

import numpy as np

from . import attacks, maxprod, scenario
from .attacks import Perturbation
from .nnet import Mlp, OutputScaler
from .scenario import NetworkConfig

DATASET_MAGIC = b"MUDS"
DATASET_VERSION = 1
REPORT_HEADER = ["attack_id", "cell", "epsilon", "success_rate", "seconds", "n_craft", "seed"]


class DatasetError(ValueError):
    """Dataset file or contents violate the format contract."""


def config_fingerprint(config: NetworkConfig, seed: int, n_samples: int) -> bytes:
    """sha256 over the config fields plus generation seed and sample count."""
    parts = [f"{f.name}={getattr(config, f.name)!r}" for f in fields(NetworkConfig)]
    parts.append(f"seed={seed} n={n_samples}")
    return hashlib.sha256(";".join(parts).encode()).digest()


@dataclass
class Dataset:
    inputs: np.ndarray     # (n, 2KL) normalized positions
    targets: np.ndarray    # (n, L, K+1) powers / p_max, last entry the sum
    fingerprint: bytes
    seed: int

    @property
    def n_samples(self) -> int:
        return len(self.inputs)

    def validate(self) -> None:
        if self.inputs.ndim != 2 or self.targets.ndim != 3:
            raise DatasetError("bad array ranks")
        if len(self.inputs) != len(self.targets):
            raise DatasetError("inputs/targets length mismatch")
        if self.targets.size:
            head = self.targets[..., -1]
            body = self.targets[..., :-1].sum(axis=-1)
            if np.max(np.abs(head - body)) > 1e-9:
                raise DatasetError("sum output does not match the per-user powers")
            if np.any(head > 1.0 + 1e-9):
                raise DatasetError("per-cell power sum exceeds the budget")

    def cell_targets(self, cell: int) -> np.ndarray:
        return self.targets[:, cell, :]


def _sample_seed(seed: int, index: int, attempt: int) -> int:
    return int(np.random.SeedSequence([seed, index, attempt]).generate_state(1)[0])


def generate_dataset(config: NetworkConfig, n_samples: int, seed: int,
                     solver_settings: maxprod.SolverSettings | None = None) -> Dataset:
    """Drop users, build MR gains, solve max-prod, normalize, repeat.

    Samples whose solve does not converge are regenerated with a fresh
    sub-seed; generation aborts if more than 1% of samples needed that.
    """
    config.validate()
    scaler = scenario.default_scaler(config)
    L, K = config.n_cells, config.n_ues_per_cell
    inputs = np.empty((n_samples, config.input_dim))
    targets = np.empty((n_samples, L, K + 1))
    regenerated = 0
    for i in range(n_samples):
        for attempt in range(100):
            real = scenario.drop_ues(config, _sample_seed(seed, i, attempt))
            gains = scenario.mr_gain_profile(real, config)
            result = maxprod.solve_maxprod(gains, config.p_max, solver_settings)
            if result.converged:
                break
            regenerated += 1
            if regenerated > max(1, 0.01 * n_samples):
                raise maxprod.NonConvergence(
                    f"more than 1% of samples failed to converge (sample {i})")
        else:
            raise maxprod.NonConvergence(f"sample {i}: no converged solve in 100 attempts")
        inputs[i] = scenario.normalize_positions(real, scaler)
        rho = result.allocation.rho / config.p_max
        targets[i, :, :K] = rho
        targets[i, :, K] = rho.sum(axis=1)
    ds = Dataset(inputs=inputs, targets=targets,
                 fingerprint=config_fingerprint(config, seed, n_samples), seed=seed)
    ds.validate()
    return ds


def save_dataset(ds: Dataset, path) -> None:
    ds.validate()
    n = ds.n_samples
    L, K = ds.targets.shape[1], ds.targets.shape[2] - 1
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<BIIIq", DATASET_VERSION, n, L, K, ds.seed))
        fh.write(ds.fingerprint)
        fh.write(np.ascontiguousarray(ds.inputs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.targets, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(4) != DATASET_MAGIC:
            raise DatasetError(f"{path}: not a dataset file")
        version, n, L, K, seed = struct.unpack("<BIIIq", fh.read(21))
        if version != DATASET_VERSION:
            raise DatasetError(f"{path}: unsupported version {version}")
        fingerprint = fh.read(32)
        inputs = np.frombuffer(fh.read(n * 2 * L * K * 8), dtype="<f8").reshape(n, 2 * L * K)
        targets = np.frombuffer(fh.read(n * L * (K + 1) * 8), dtype="<f8").reshape(n, L, K + 1)
    ds = Dataset(inputs=inputs.astype(float), targets=targets.astype(float),
                 fingerprint=fingerprint, seed=seed)
    ds.validate()
    return ds


# --- attack evaluation ---


def feasible_mask(model: Mlp, scaler: OutputScaler, inputs: np.ndarray, p_max: float) -> np.ndarray:
    """Boolean mask of inputs whose clean prediction stays within the budget."""
    return ~attacks.is_infeasible(model, scaler, inputs, p_max)


def success_rate(model: Mlp, scaler: OutputScaler, inputs: np.ndarray,
                 perturbation: Perturbation, p_max: float) -> float:
    """Fraction of inputs driven infeasible by one universal perturbation."""
    if len(inputs) == 0:
        raise ValueError("empty evaluation set")
    hits = attacks.is_infeasible(model, scaler, inputs + perturbation.eta, p_max)
    return float(np.count_nonzero(hits)) / len(inputs)


def per_sample_success_rate(model: Mlp, scaler: OutputScaler, inputs: np.ndarray,
                            perturbations, p_max: float) -> float:
    """Fraction of inputs fooled by their own per-sample perturbation."""
    if len(inputs) != len(perturbations):
        raise ValueError("need exactly one perturbation per input")
    hits = sum(bool(attacks.is_infeasible(model, scaler, x + p.eta, p_max))
               for x, p in zip(inputs, perturbations))
    return hits / len(inputs)


def min_perturbation_success_rate(magnitudes, epsilon: float) -> float:
    """Attack-a2 semantics: a sample counts at budget epsilon when the minimal
    magnitude found for it is no larger than epsilon."""
    magnitudes = np.asarray(magnitudes, dtype=float)
    return float(np.count_nonzero(magnitudes <= epsilon)) / len(magnitudes)


def trial_seeds(seed: int, n_trials: int) -> list[int]:
    """Deterministic sub-seeds for Monte-Carlo trials."""
    return [int(np.random.SeedSequence([seed, t]).generate_state(1)[0])
            for t in range(n_trials)]


def monte_carlo_best_uap(craft_fn, score_fn, n_trials: int, seed: int) -> Perturbation:
    """Run craft_fn over n_trials sub-seeds and keep the perturbation that
    score_fn rates highest on the crafting pool (ties keep the earliest)."""
    best, best_score = None, -1.0
    for sub_seed in trial_seeds(seed, n_trials):
        pert = craft_fn(sub_seed)
        score = score_fn(pert)
        if score > best_score:
            best, best_score = pert, score
    return best


def draw_craft_samples(pool: np.ndarray, n_craft: int, seed: int) -> np.ndarray:
    """Sample n_craft rows from the pool without replacement (with, if the
    pool is smaller than the draw)."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), size=n_craft, replace=len(pool) < n_craft)
    return pool[idx]


def craft_uap(attack_id: str, model: Mlp, scaler: OutputScaler, pool: np.ndarray,
              p_max: float, settings: attacks.AttackSettings,
              n_trials: int = 1) -> Perturbation:
    """Monte-Carlo wrapper shared by the library and the CLI for a3..a6.

    Each trial draws a fresh craft set from the pool with a deterministic
    sub-seed; trials are scored on their own craft set.
    """
    settings.validate()
    accumulative = attack_id in ("a3", "a4")

    def craft(sub_seed: int) -> Perturbation:
        samples = draw_craft_samples(pool, settings.n_craft, sub_seed)
        if accumulative:
            return attacks.uap_accumulative(model, scaler, samples, p_max,
                                            settings.epsilon, i_max=settings.i_max,
                                            eps_acc=settings.eps_acc)
        return attacks.uap_pca(model, scaler, samples, p_max, settings.epsilon,
                               seed=sub_seed)

    def score(pert: Perturbation) -> float:
        return success_rate(model, scaler, pool, pert, p_max)

    return monte_carlo_best_uap(craft, score, n_trials, settings.seed)


def sweep_n_sensitivity(model: Mlp, scaler: OutputScaler, pool: np.ndarray,
                        test_inputs: np.ndarray, n_values, epsilon: float,
                        p_max: float, seed: int, n_trials: int = 1,
                        i_max: int = 10) -> list[dict]:
    """Success rates of the accumulative and PCA universal attacks for each
    craft-set size; one row per N."""
    rows = []
    for n_craft in n_values:
        settings = attacks.AttackSettings(epsilon=epsilon, n_craft=int(n_craft),
                                          seed=seed, i_max=i_max)
        rates = {}
        for attack_id in ("a3", "a5"):
            pert = craft_uap(attack_id, model, scaler, pool, p_max, settings, n_trials)
            rates[attack_id] = success_rate(model, scaler, test_inputs, pert, p_max)
        rows.append({"n_craft": int(n_craft), "a3": rates["a3"], "a5": rates["a5"]})
    return rows


def benchmark_timing(tasks: dict) -> dict:
    """Wall-clock seconds for each named zero-argument task, run once."""
    timings = {}
    for name, fn in tasks.items():
        start = time.perf_counter()
        fn()
        timings[name] = time.perf_counter() - start
    return timings


# --- report CSV ---


def write_report_csv(path, rows) -> None:
    """Rows are dicts with the REPORT_HEADER keys; floats serialized via repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in rows:
            writer.writerow([row["attack_id"], row["cell"], repr(float(row["epsilon"])),
                             repr(float(row["success_rate"])), repr(float(row["seconds"])),
                             row["n_craft"], row["seed"]])


def read_report_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPORT_HEADER:
            raise DatasetError(f"{path}: unexpected report header {header}")
        rows = []
        for rec in reader:
            rows.append({"attack_id": rec[0], "cell": int(rec[1]), "epsilon": float(rec[2]),
                         "success_rate": float(rec[3]), "seconds": float(rec[4]),
                         "n_craft": int(rec[5]), "seed": int(rec[6])})
    return rows

"""Attack suite against power-allocation regressors.

Attack ids follow the benchmark menu:

    a1  random corner perturbation (baseline)
    a2  minimum perturbation via bisection along the gradient-sign ray
    a3  accumulative universal perturbation, white-box
    a4  accumulative universal perturbation crafted on a surrogate (black-box)
    a5  PCA-direction universal perturbation, white-box
    a6  PCA-direction universal perturbation on a surrogate (black-box)
    a7  Adam-optimized per-sample attack
    a8  FGSM
    a9  PGD

An attack succeeds on an input when the predicted per-cell power sum
(the first K outputs, denormalized to mW) strictly exceeds the budget.
Every crafting function sees exactly one model, so the black-box variants
are pure composition: craft on the surrogate, evaluate on the victim.

Perturbation files are plain text, one record per perturbation:
a metadata line "attack_id epsilon seed cell" followed by one line with the
input-space components separated by spaces. Floats use repr (round-trip
exact).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import first_principal_direction
from .nnet import Mlp, OutputScaler, forward, grad_input

ATTACK_IDS = ("a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "a9")
UNIVERSAL_ATTACKS = ("a1", "a3", "a4", "a5", "a6")
PER_SAMPLE_ATTACKS = ("a2", "a7", "a8", "a9")
BLACK_BOX_ATTACKS = ("a4", "a6")


class BoundsInverted(ValueError):
    """clip() called with lo > hi or non-finite bounds."""


@dataclass(frozen=True)
class AttackSettings:
    """Knob bag for the attack suite; i_max is the iteration cap of whichever
    algorithm consumes the settings (bisection, accumulation passes, or Adam)."""

    epsilon: float
    delta_max: float = 2.0
    eps_acc: float = 1e-4
    i_max: int = 30
    pgd_steps: int = 10
    pgd_step_size: float | None = None   # None -> epsilon/4
    adam_lr: float = 0.01
    n_craft: int = 1500
    seed: int = 0

    def validate(self) -> None:
        ok = (self.epsilon > 0 and self.eps_acc > 0 and self.eps_acc < self.delta_max
              and self.i_max >= 1 and self.n_craft >= 1 and self.pgd_steps >= 1
              and self.adam_lr > 0)
        if not ok:
            raise ValueError("invalid attack settings")


@dataclass
class Perturbation:
    eta: np.ndarray
    norm_inf: float | None = None  # filled from eta when omitted

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if self.norm_inf is None:
            self.norm_inf = float(np.max(np.abs(self.eta))) if self.eta.size else 0.0


def sign(g):
    """Gradient sign with sign(0) := +1."""
    return np.where(np.asarray(g, dtype=float) >= 0, 1.0, -1.0)


def clip(v, lo, hi):
    """Elementwise clamp of v into [lo, hi]; bounds must be finite with lo <= hi."""
    v = np.asarray(v, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise BoundsInverted("clip bounds must be finite")
    if np.any(lo > hi):
        raise BoundsInverted("clip called with lo > hi")
    return np.clip(v, lo, hi)


def loss_sum_powers(model: Mlp, scaler: OutputScaler, x) -> float | np.ndarray:
    """Sum of the first K predicted powers in mW (the attacked quantity)."""
    out = forward(model, x)
    k = model.output_dim - 1
    return scaler.denormalize(out[..., :k]).sum(axis=-1)


def loss_gradient(model: Mlp, scaler: OutputScaler, x) -> np.ndarray:
    """Input gradient of loss_sum_powers."""
    w = np.zeros(model.output_dim)
    w[:-1] = scaler.scale
    return grad_input(model, x, w)


def is_infeasible(model: Mlp, scaler: OutputScaler, x, p_max: float):
    """True when the predicted power sum strictly exceeds the budget."""
    return loss_sum_powers(model, scaler, x) > p_max


def random_perturbation(epsilon: float, dim: int, seed: int) -> Perturbation:
    """Attack a1: epsilon times i.i.d. uniform +-1 entries (a random corner)."""
    rng = np.random.default_rng(seed)
    eta = epsilon * np.where(rng.random(dim) < 0.5, -1.0, 1.0)
    return Perturbation(eta=eta)


def fgsm(model: Mlp, scaler: OutputScaler, x, epsilon: float) -> Perturbation:
    """Attack a8: epsilon times the gradient sign."""
    return Perturbation(eta=epsilon * sign(loss_gradient(model, scaler, x)))


def pgd(model: Mlp, scaler: OutputScaler, x, epsilon: float,
        steps: int = 10, step_size: float | None = None) -> Perturbation:
    """Attack a9: iterated gradient-sign ascent projected onto the epsilon box.

    No random start; steps=1 with step_size=epsilon reduces to FGSM.
    """
    x = np.asarray(x, dtype=float)
    if step_size is None:
        step_size = epsilon / 4
    lo, hi = x - epsilon, x + epsilon
    x_adv = x.copy()
    for _ in range(steps):
        g = loss_gradient(model, scaler, x_adv)
        x_adv = clip(x_adv + step_size * sign(g), lo, hi)
    return Perturbation(eta=x_adv - x)


def min_perturbation(model: Mlp, scaler: OutputScaler, x, p_max: float,
                     delta_max: float = 2.0, eps_acc: float = 1e-4,
                     i_max: int = 30) -> Perturbation:
    """Attack a2: bisect the smallest gradient-sign magnitude that drives the
    prediction infeasible.

    The gradient (hence the ray direction) is evaluated once at the given x.
    If even delta_max never fools the model the returned magnitude is
    delta_max itself.
    """
    x = np.asarray(x, dtype=float)
    direction = sign(loss_gradient(model, scaler, x))
    eps_max, eps_min = delta_max, 0.0
    it = 0
    while (eps_max - eps_min > eps_acc) and (it < i_max):
        it += 1
        eps = (eps_max + eps_min) / 2
        if loss_sum_powers(model, scaler, x + eps * direction) < p_max:
            eps_min = eps
        else:
            eps_max = eps
    return Perturbation(eta=eps_max * direction)


def uap_accumulative(model: Mlp, scaler: OutputScaler, craft_samples, p_max: float,
                     epsilon: float, i_max: int = 10, eps_acc: float = 1e-4,
                     inner_i_max: int = 30) -> Perturbation:
    """Attacks a3/a4: accumulate per-sample minimum perturbations into one
    universal direction, projecting onto the epsilon box after each addition.

    Samples that the current perturbation already fools contribute nothing
    that pass. The inner search runs with the epsilon budget as its maximum
    magnitude.
    """
    craft = np.atleast_2d(np.asarray(craft_samples, dtype=float))
    if len(craft) == 0:
        raise ValueError("craft_samples must be nonempty")
    eta = np.zeros(craft.shape[1])
    for _ in range(i_max):
        for x_i in craft:
            x_adv = x_i + eta
            if loss_sum_powers(model, scaler, x_adv) <= p_max:
                delta = min_perturbation(model, scaler, x_adv, p_max,
                                         delta_max=epsilon, eps_acc=eps_acc,
                                         i_max=inner_i_max)
                eta = clip(eta + delta.eta, -epsilon, epsilon)
    return Perturbation(eta=eta)


def uap_pca(model: Mlp, scaler: OutputScaler, craft_samples, p_max: float,
            epsilon: float, seed: int = 0) -> Perturbation:
    """Attacks a5/a6: epsilon times the sign of the first principal direction
    of the per-sample loss-gradient matrix (no centering).

    The direction's sign ambiguity is resolved by evaluating both signs on
    the craft set and keeping the one with more infeasible outcomes (ties
    keep +).
    """
    craft = np.atleast_2d(np.asarray(craft_samples, dtype=float))
    if len(craft) == 0:
        raise ValueError("craft_samples must be nonempty")
    grads = np.stack([loss_gradient(model, scaler, x) for x in craft])
    v1 = first_principal_direction(grads, seed=seed).vector
    eta = epsilon * sign(v1)
    wins_plus = int(np.count_nonzero(is_infeasible(model, scaler, craft + eta, p_max)))
    wins_minus = int(np.count_nonzero(is_infeasible(model, scaler, craft - eta, p_max)))
    if wins_minus > wins_plus:
        eta = -eta
    return Perturbation(eta=eta)


def optimized_attack(model: Mlp, scaler: OutputScaler, x, p_max: float,
                     epsilon: float, i_max: int = 200, adam_lr: float = 0.01) -> Perturbation:
    """Attack a7: Adam ascent on the power sum over the perturbation, one step
    per iteration with the adversarial point clipped into the epsilon box,
    breaking as soon as the prediction goes infeasible.

    Already-infeasible inputs return the zero perturbation.
    """
    x = np.asarray(x, dtype=float)
    if is_infeasible(model, scaler, x, p_max):
        return Perturbation(eta=np.zeros_like(x))
    lo, hi = x - epsilon, x + epsilon
    eta = np.zeros_like(x)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps_hat = 0.9, 0.999, 1e-8
    x_adv = x.copy()
    for t in range(1, i_max + 1):
        x_adv = clip(x + eta, lo, hi)
        g = -loss_gradient(model, scaler, x_adv)   # minimizing -loss
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g ** 2
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        eta = eta - adam_lr * m_hat / (np.sqrt(v_hat) + eps_hat)
        x_adv = clip(x + eta, lo, hi)
        if is_infeasible(model, scaler, x_adv, p_max):
            break
    return Perturbation(eta=x_adv - x)


# --- perturbation file i/o ---


@dataclass
class PerturbationRecord:
    attack_id: str
    epsilon: float
    seed: int
    cell: int
    perturbation: Perturbation


def save_perturbations(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{rec.attack_id} {rec.epsilon!r} {rec.seed} {rec.cell}\n")
            fh.write(" ".join(repr(float(v)) for v in rec.perturbation.eta) + "\n")


def load_perturbations(path) -> list[PerturbationRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) % 2 != 0:
        raise ValueError(f"{path}: expected metadata/vector line pairs")
    for meta, vec in zip(lines[::2], lines[1::2]):
        attack_id, eps_s, seed_s, cell_s = meta.split()
        eta = np.array([float(tok) for tok in vec.split()])
        records.append(PerturbationRecord(attack_id=attack_id, epsilon=float(eps_s),
                                          seed=int(seed_s), cell=int(cell_s),
                                          perturbation=Perturbation(eta=eta)))
    return records

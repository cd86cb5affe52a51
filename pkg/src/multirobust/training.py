"""Natural, single-attack and multi-attack ("max" / "avg") adversarial training."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attacks import AttackConfig, AttackOutcome, run_attack
from .geometry import Lp, scale
from .stats import wilson_radius
from .tensor_nn import Model, OptimizerState, optimizer_step

STRATEGIES = ("natural", "single", "avg", "max")


@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 100
    optimizer: dict = field(default_factory=lambda: {"kind": "adam", "lr": 1e-3})
    attacks: list = field(default_factory=list)
    strategy: str = "natural"
    warmup_fraction: float = 1.0
    q_range: tuple = (0.8, 0.995)
    seed: int = 0
    lr_schedule: dict | None = None  # {epoch index: new lr}
    shuffle: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        n = len(self.attacks)
        if self.strategy == "single" and n != 1:
            raise ValueError("strategy 'single' needs exactly one attack")
        if self.strategy in ("avg", "max") and n < 2:
            raise ValueError(f"strategy {self.strategy!r} needs at least two attacks")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 < self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1]")
        lo, hi = self.q_range
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError("q_range must satisfy 0 <= lo <= hi < 1")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)


def _attack_seed(*key) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def _epoch_budget(acfg: AttackConfig, epoch: int, warmup: float):
    if epoch == 0 and warmup < 1.0:
        return scale(acfg.budget, warmup)
    return acfg.budget


def _check_compat(model: Model, x, attacks):
    if x.shape[1:] != model.input_shape:
        raise ValueError(f"data shape {x.shape[1:]} does not match model input "
                         f"{model.input_shape}")
    for a in attacks:
        if not isinstance(a.budget, Lp) and len(model.input_shape) != 3:
            raise ValueError("rotation-translation attacks need image inputs")


def _budget_repr(b):
    d = asdict(b)
    d["type"] = type(b).__name__
    if "p" in d and d["p"] == float("inf"):
        d["p"] = "inf"
    return d


def train(model: Model, dataset, cfg: TrainConfig, probe=None):
    """Train a copy of ``model`` on ``dataset = (x, y)``.

    Returns the trained model and a :class:`TrainLog` with one record per
    epoch. When ``probe = (x, y)`` is given, each record also carries clean
    and per-attack adversarial accuracy on it.
    """
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("empty dataset")
    _check_compat(model, x, cfg.attacks)
    model = model.copy()
    opt = OptimizerState(**cfg.optimizer)
    log = TrainLog()
    order_rng = np.random.default_rng([cfg.seed, 7])
    for epoch in range(cfg.epochs):
        if cfg.lr_schedule and epoch in cfg.lr_schedule:
            opt.lr = float(cfg.lr_schedule[epoch])
        idx = order_rng.permutation(len(x)) if cfg.shuffle else np.arange(len(x))
        budgets = [_epoch_budget(a, epoch, cfg.warmup_fraction) for a in cfg.attacks]
        batch_losses = []
        for b, start in enumerate(range(0, len(x), cfg.batch_size)):
            sel = idx[start:start + cfg.batch_size]
            loss, grads = _batch_grads(model, x[sel], y[sel], cfg, budgets, epoch, b)
            batch_losses.append(loss)
            optimizer_step(opt, model, grads)
        rec = {
            "epoch": epoch + 1,
            "train_loss": float(np.mean(batch_losses)),
            "batch_losses": [float(v) for v in batch_losses],
            "lr": opt.lr,
            "budgets": [_budget_repr(bud) for bud in budgets],
        }
        if probe is not None:
            px, py = probe
            rec["clean_acc"] = float(np.mean(model.predict(px) == py))
            rec["adv_acc"] = [float(np.mean(~run_attack(model, px, py, a).success))
                              for a in cfg.attacks]
        log.records.append(rec)
    return model, log


def _batch_grads(model, xb, yb, cfg, budgets, epoch, b):
    if cfg.strategy == "natural":
        losses, _, _, grads = model.evaluate(xb, yb, param_grads=True)
        return float(losses.mean()), grads
    advs = []
    for i, (acfg, bud) in enumerate(zip(cfg.attacks, budgets)):
        seed = _attack_seed(cfg.seed, epoch, b, i)
        run_cfg = replace(acfg, budget=bud, seed=seed)
        if isinstance(bud, Lp) and bud.p == 1:
            q = np.random.default_rng(seed).uniform(*cfg.q_range)
            run_cfg = replace(run_cfg, q=float(q))
        advs.append(run_attack(model, xb, yb, run_cfg))
    if cfg.strategy == "single":
        xs = advs[0].x_adv
    elif cfg.strategy == "max":
        # np.argmax resolves ties to the lowest attack index
        pick = np.argmax(np.stack([a.loss for a in advs]), axis=0)
        xs = np.stack([a.x_adv for a in advs])[pick, np.arange(len(xb))]
    else:
        total = None
        loss_sum = 0.0
        for a in advs:
            losses, _, _, grads = model.evaluate(a.x_adv, yb, param_grads=True)
            loss_sum += float(losses.mean())
            total = grads if total is None else [t + g for t, g in zip(total, grads)]
        n = len(advs)
        return loss_sum / n, [t / n for t in total]
    losses, _, _, grads = model.evaluate(xs, yb, param_grads=True)
    return float(losses.mean()), grads


# evaluation ---------------------------------------------------------------

@dataclass
class RiskReport:
    names: list
    groups: list
    robust_masks: np.ndarray  # (n_attacks, n_points), True where the attack failed
    clean_correct: np.ndarray

    @property
    def n(self) -> int:
        return self.robust_masks.shape[1]

    def group_names(self) -> list:
        seen = []
        for g in self.groups:
            if g not in seen:
                seen.append(g)
        return seen

    def group_masks(self) -> np.ndarray:
        gs = np.array(self.groups)
        return np.stack([self.robust_masks[gs == g].all(axis=0) for g in self.group_names()])

    @property
    def per_attack_accuracy(self) -> list:
        return [float(m.mean()) for m in self.robust_masks]

    @property
    def per_type_accuracy(self) -> list:
        return [float(m.mean()) for m in self.group_masks()]

    @property
    def union_accuracy(self) -> float:
        return float(self.robust_masks.all(axis=0).mean())

    @property
    def average_accuracy(self) -> float:
        return float(np.mean(self.per_type_accuracy))

    def check(self):
        u, per, avg = self.union_accuracy, self.per_type_accuracy, self.average_accuracy
        if not (u <= min(per) + 1e-12 and min(per) <= avg + 1e-12):
            raise AssertionError(f"inconsistent report: union {u}, per-type {per}, avg {avg}")
        return self

    def to_dict(self) -> dict:
        n = self.n
        per_type = self.per_type_accuracy
        n_types = len(per_type)
        return {
            "n": n,
            "clean_accuracy": float(self.clean_correct.mean()),
            "attacks": [{"name": nm, "group": g, "accuracy": a,
                         "ci": wilson_radius(a * n, n)}
                        for nm, g, a in zip(self.names, self.groups, self.per_attack_accuracy)],
            "types": [{"name": g, "accuracy": a, "ci": wilson_radius(a * n, n)}
                      for g, a in zip(self.group_names(), per_type)],
            "union_accuracy": self.union_accuracy,
            "union_ci": wilson_radius(self.union_accuracy * n, n),
            "average_accuracy": self.average_accuracy,
            "average_ci": wilson_radius(self.average_accuracy * n * n_types, n * n_types),
            "masks": [[int(v) for v in m] for m in self.robust_masks],
            "clean_mask": [int(v) for v in self.clean_correct],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RiskReport":
        return cls(names=[a["name"] for a in d["attacks"]],
                   groups=[a["group"] for a in d["attacks"]],
                   robust_masks=np.array(d["masks"], dtype=bool).reshape(len(d["attacks"]), -1),
                   clean_correct=np.array(d["clean_mask"], dtype=bool))


def evaluate_adversarial(model: Model, dataset, attacks, names=None, groups=None) -> RiskReport:
    """Per-attack, union and average accuracy over ``dataset``.

    ``attacks`` holds :class:`AttackConfig` objects or callables
    ``(model, x, y) -> AttackOutcome``. Attacks sharing a ``groups`` label form
    one perturbation type (a point survives the type only if it survives every
    attack in it); the average is taken over types.
    """
    x, y = dataset
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    names = list(names) if names is not None else [f"attack{i}" for i in range(len(attacks))]
    groups = list(groups) if groups is not None else list(names)
    masks = []
    for a in attacks:
        out: AttackOutcome = run_attack(model, x, y, a) if isinstance(a, AttackConfig) \
            else a(model, x, y)
        masks.append(~np.asarray(out.success, dtype=bool))
    clean = model.predict(x) == y
    return RiskReport(names, groups, np.array(masks).reshape(len(attacks), len(x)), clean).check()


def opt_baselines(per_attack_best_risks) -> tuple[float, float]:
    """Best achievable (max, avg) risk if separate optimal models' errors align."""
    risks = [float(r) for r in per_attack_best_risks]
    if not risks or any(not 0.0 <= r <= 1.0 for r in risks):
        raise ValueError("risks must be a non-empty list of values in [0, 1]")
    return max(risks), sum(risks) / len(risks)

"""Experiment orchestration: train, attack, verify-theory, scan-surface, report.

Configs are flat JSON objects. Relative paths inside a config resolve
against the config file's directory. The output directory may be
overridden with the ``MULTIROBUST_OUT`` environment variable.

Dataset entries look like ``{"images": path, "labels": path, "n": 1000}``;
``{"surrogate": true}`` instead builds the scikit-learn digit surrogate in
memory. Attack entries look like::

    {"name": "linf", "type": "linf", "eps": 0.3, "steps": 100, "restarts": 1}

with ``type`` one of linf, l2, l1 (SLIDE), l1_pgd, rt, pointwise,
affine_lp, affine_rt_linf. Affine entries carry ``"a"`` and ``"b"``
sub-entries for their two endpoint budgets.
"""

from __future__ import annotations

import json
import os
import platform
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from . import io as mio
from . import theory_lab
from .attacks import (
    AttackConfig,
    affine_lp_attack,
    affine_rt_linf_attack,
    pgd_attack,
    pointwise_attack,
    run_attack,
    scan_loss_surface,
)
from .geometry import INF, Lp, RotateTranslate
from .tensor_nn import mlp, mnist_cnn
from .training import RiskReport, TrainConfig, evaluate_adversarial, train

COMMANDS = ("train", "attack", "verify-theory", "scan-surface", "report")
OUT_ENV = "MULTIROBUST_OUT"


@dataclass
class ExperimentConfig:
    command: str
    output: str = "out"
    seed: int = 0
    dataset: dict | None = None
    model: dict | str | None = None  # architecture dict for train, path otherwise
    train: dict = field(default_factory=dict)
    attacks: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}; expected one of {COMMANDS}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        d = dict(d)
        known = {k: d.pop(k) for k in ("command", "output", "seed", "dataset", "model",
                                       "train", "attacks") if k in d}
        return cls(**known, extra=d, base_dir=base_dir)

    def to_dict(self) -> dict:
        out = {"command": self.command, "output": self.output, "seed": self.seed}
        for k in ("dataset", "model"):
            if getattr(self, k) is not None:
                out[k] = getattr(self, k)
        if self.train:
            out["train"] = self.train
        if self.attacks:
            out["attacks"] = self.attacks
        out.update(self.extra)
        return out

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def out_dir(self) -> str:
        return os.environ.get(OUT_ENV) or self.path(self.output)


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        d = json.load(f)
    return ExperimentConfig.from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))


# datasets and models --------------------------------------------------------

def load_dataset(cfg: ExperimentConfig, spec: dict | None, split: str) -> mio.DatasetHandle:
    if spec is None:
        raise ValueError(f"command {cfg.command!r} needs a dataset entry")
    if spec.get("surrogate"):
        tx, ty, vx, vy = mio.surrogate_digits(spec.get("n_train", 10_000),
                                              spec.get("n_test", 1_000), spec.get("seed", 0))
        x, y = (tx, ty) if split == "train" else (vx, vy)
        ds = mio.DatasetHandle("surrogate-digits", split, x[..., None] / 255.0,
                               y.astype(np.int64), 10, {"kind": "byte/255"})
    else:
        for key in ("images", "labels"):
            if key not in spec:
                raise ValueError(f"dataset entry needs {key!r}")
            if not os.path.exists(cfg.path(spec[key])):
                raise FileNotFoundError(cfg.path(spec[key]))
        ds = mio.load_idx(cfg.path(spec["images"]), cfg.path(spec["labels"]),
                          name=spec.get("name", "idx"), split=split,
                          class_count=spec.get("class_count", 10))
    return ds.subset(spec.get("n"))


def build_model(arch: dict, input_shape, seed: int):
    kind = arch.get("arch", "mnist_cnn")
    if kind == "mnist_cnn":
        return mnist_cnn(seed=seed, input_shape=tuple(input_shape),
                         class_count=arch.get("classes", 10))
    if kind == "mlp":
        return mlp(tuple(input_shape), list(arch.get("hidden", [100])),
                   arch.get("classes", 10), seed=seed)
    raise ValueError(f"unknown architecture {kind!r}")


# attack specs ---------------------------------------------------------------

_P = {"linf": INF, "l2": 2, "l1": 1, "l1_pgd": 1}


def _budget(spec: dict):
    t = spec["type"]
    if t in _P:
        if spec.get("eps", 0) <= 0:
            raise ValueError(f"attack {spec.get('name', t)!r} needs eps > 0")
        return Lp(_P[t], float(spec["eps"]))
    if t == "rt":
        return RotateTranslate(int(spec.get("dx", 3)), int(spec.get("dy", 3)),
                               float(spec.get("angle", 30.0)), int(spec.get("grid_angles", 31)))
    raise ValueError(f"no single budget for attack type {t!r}")


def attack_config(spec: dict, seed: int) -> AttackConfig:
    box = spec.get("box", [0.0, 1.0])
    return AttackConfig(budget=_budget(spec), steps=int(spec.get("steps", 100)),
                        step_size=spec.get("step_size"), restarts=int(spec.get("restarts", 1)),
                        q=float(spec.get("q", 0.9)), rt_samples=spec.get("rt_samples"),
                        seed=int(spec.get("seed", seed)),
                        box=tuple(box) if box is not None else None,
                        interpolation=spec.get("interpolation", "bilinear"))


def attack_callable(spec: dict, seed: int):
    """Turn an attack entry into ``(model, x, y) -> AttackOutcome``."""
    t = spec.get("type")
    if t in ("linf", "l2", "l1", "rt"):
        cfg = attack_config(spec, seed)
        return lambda m, x, y: run_attack(m, x, y, cfg)
    if t == "l1_pgd":
        cfg = attack_config(spec, seed)
        return lambda m, x, y: pgd_attack(m, x, y, cfg)
    if t == "pointwise":
        budget = _budget({**spec, "type": "l1"})
        box = tuple(spec.get("box", [0.0, 1.0]))
        tries = int(spec.get("max_tries", 50))
        return lambda m, x, y: pointwise_attack(m, x, y, budget,
                                                rng=np.random.default_rng([seed, 9]),
                                                max_tries=tries, box=box)
    if t == "affine_lp":
        a, b = spec["a"], spec["b"]
        cfg = attack_config({**spec, **a, "type": a["type"]}, seed)
        return lambda m, x, y: affine_lp_attack(m, x, y, _budget(a), _budget(b), cfg)
    if t == "affine_rt_linf":
        rt, li = spec["rt"], spec["linf"]
        cfg = attack_config({**spec, **li, "type": "linf"}, seed)
        return lambda m, x, y: affine_rt_linf_attack(m, x, y, _budget({**rt, "type": "rt"}),
                                                     _budget({**li, "type": "linf"}), cfg)
    raise ValueError(f"unknown attack type {t!r}")


# commands -------------------------------------------------------------------

def versions() -> dict:
    import scipy
    return {"multirobust": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


class _Outputs:
    """Tracks files written by one command so they can be removed on failure."""

    def __init__(self, out_dir):
        self.dir = out_dir
        self.files: list[str] = []

    def path(self, name):
        return os.path.join(self.dir, name)

    def text(self, name, text):
        p = self.path(name)
        mio.atomic_write_text(p, text)
        self.files.append(p)
        return p

    def json(self, name, obj):
        return self.text(name, mio.dumps_json(obj))

    def model(self, name, model):
        p = self.path(name)
        mio.serialize_model(model, p)
        self.files.append(p)
        return p

    def cleanup(self):
        for p in self.files:
            if os.path.exists(p):
                os.unlink(p)


def _manifest(cfg: ExperimentConfig, outs: _Outputs) -> dict:
    return {"config": cfg.to_dict(), "base_dir": cfg.base_dir, "seed": cfg.seed,
            "command": cfg.command, "versions": versions(),
            "outputs": {os.path.basename(p): mio.sha256_file(p) for p in outs.files}}


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = dict(cfg.train)
    specs = t.pop("attacks", cfg.attacks)
    attacks = [attack_config(s, cfg.seed) for s in specs]
    if "lr_schedule" in t and t["lr_schedule"]:
        t["lr_schedule"] = {int(k): float(v) for k, v in t["lr_schedule"].items()}
    if "q_range" in t:
        t["q_range"] = tuple(t["q_range"])
    return TrainConfig(attacks=attacks, seed=cfg.seed, **t)


def cmd_train(cfg: ExperimentConfig, outs: _Outputs) -> int:
    ds = load_dataset(cfg, cfg.dataset, "train")
    arch = cfg.model if isinstance(cfg.model, dict) else {"arch": "mnist_cnn"}
    model = build_model(arch, ds.x.shape[1:], cfg.seed)
    tcfg = _train_config(cfg)
    probe = None
    if cfg.extra.get("probe"):
        probe = load_dataset(cfg, cfg.extra["probe"], "test").pair
    trained, log = train(model, ds.pair, tcfg, probe=probe)
    outs.model("model.bin", trained)
    outs.text("train_log.jsonl", log.to_jsonl())
    return 0


def _model_path(cfg: ExperimentConfig) -> str:
    if not isinstance(cfg.model, str):
        raise ValueError(f"command {cfg.command!r} needs a model path")
    p = cfg.path(cfg.model)
    if not os.path.exists(p):
        raise FileNotFoundError(p)
    return p


def cmd_attack(cfg: ExperimentConfig, outs: _Outputs) -> int:
    model = mio.load_model(_model_path(cfg))
    spec = dict(cfg.dataset or {})
    spec.setdefault("n", 1000)
    ds = load_dataset(cfg, spec, "test")
    if not cfg.attacks:
        raise ValueError("attack command needs at least one attack")
    names = [a.get("name", a["type"]) for a in cfg.attacks]
    groups = [a.get("group", n) for a, n in zip(cfg.attacks, names)]
    fns = [attack_callable(a, cfg.seed) for a in cfg.attacks]
    report = evaluate_adversarial(model, ds.pair, fns, names, groups)
    outs.json("report.json", report.to_dict())
    return 0


def cmd_verify(cfg: ExperimentConfig, outs: _Outputs) -> int:
    n = int(cfg.extra.get("samples", 100_000))
    checks = theory_lab.verify_all(n_samples=n, seed=cfg.seed)
    ok = all(c["pass"] for c in checks)
    outs.json("verification.json", {"checks": checks, "pass": ok, "samples": n,
                                    "seed": cfg.seed})
    return 0 if ok else 1


def cmd_scan(cfg: ExperimentConfig, outs: _Outputs) -> int:
    model = mio.load_model(_model_path(cfg))
    ds = load_dataset(cfg, cfg.dataset, "test")
    i = int(cfg.extra.get("point", 0))
    if not 0 <= i < len(ds):
        raise IndexError(f"point {i} outside dataset of size {len(ds)}")
    x, y = ds.x[i], int(ds.y[i])
    dirs = []
    for key in ("dir_a", "dir_b"):
        spec = cfg.extra[key]
        spec = {"type": spec} if isinstance(spec, str) else spec
        spec = {"eps": _DEFAULT_EPS.get(spec["type"], 1.0), **spec}
        out = attack_callable(spec, cfg.seed)(model, x, y)
        dirs.append(np.asarray(out.x_adv) - x)
    grid_n = int(cfg.extra.get("grid", 21))
    box = cfg.extra.get("box", [0.0, 1.0])
    surf = scan_loss_surface(model, x, y, dirs[0], dirs[1], grid_n,
                             box=tuple(box) if box is not None else None)
    axis = np.linspace(0.0, 1.0, grid_n)
    rows = ["alpha," + ",".join(f"{b:.6g}" for b in axis)]
    rows += [f"{a:.6g}," + ",".join(repr(float(v)) for v in row) for a, row in zip(axis, surf)]
    outs.text("surface.csv", "\n".join(rows) + "\n")
    outs.json("surface.json", {"point": i, "label": y, "alpha": axis.tolist(),
                               "beta": axis.tolist(), "loss": surf.tolist()})
    return 0


_DEFAULT_EPS = {"linf": 0.3, "l2": 2.0, "l1": 10.0, "l1_pgd": 10.0}


def recompute_report(d: dict) -> dict:
    """Union/average accuracy from stored masks, compared with stored values."""
    rep = RiskReport.from_dict(d).check()
    fresh = rep.to_dict()
    diffs = {k: abs(fresh[k] - d[k]) for k in ("union_accuracy", "average_accuracy")}
    ok = all(v <= 1e-12 for v in diffs.values())
    return {"union_accuracy": fresh["union_accuracy"],
            "average_accuracy": fresh["average_accuracy"],
            "per_attack": {a["name"]: a["accuracy"] for a in fresh["attacks"]},
            "max_abs_diff": max(diffs.values()), "match": ok}


def cmd_report(cfg: ExperimentConfig, outs: _Outputs) -> int:
    src = cfg.path(cfg.extra.get("in", "."))
    path = os.path.join(src, "report.json") if os.path.isdir(src) else src
    with open(path) as f:
        d = json.load(f)
    summary = recompute_report(d)
    outs.json("summary.json", summary)
    return 0 if summary["match"] else 1


_COMMANDS = {"train": cmd_train, "attack": cmd_attack, "verify-theory": cmd_verify,
             "scan-surface": cmd_scan, "report": cmd_report}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one command; returns the exit status.

    Writes the command's artifacts plus ``manifest_<command>.json`` into the output
    directory. If anything fails, files written so far are removed and the
    error is re-raised with the command name attached.
    """
    out_dir = cfg.out_dir()
    os.makedirs(out_dir, exist_ok=True)
    outs = _Outputs(out_dir)
    try:
        status = _COMMANDS[cfg.command](cfg, outs)
        name = f"manifest_{cfg.command.replace('-', '_')}.json"
        mio.atomic_write_text(outs.path(name), mio.dumps_json(_manifest(cfg, outs)))
    except Exception as e:
        outs.cleanup()
        raise RuntimeError(f"{cfg.command} failed: {e}") from e
    return status


def replay(manifest_path, output: str | None = None) -> int:
    """Re-run the experiment recorded in a manifest."""
    with open(manifest_path) as f:
        man = json.load(f)
    cfg = ExperimentConfig.from_dict(man["config"], base_dir=man.get("base_dir", "."))
    if output is not None:
        cfg = replace(cfg, output=os.path.abspath(output))
    return run_experiment(cfg)

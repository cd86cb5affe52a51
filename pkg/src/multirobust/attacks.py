"""Attacks producing bounded adversarial examples.

Every attack accepts either one input (shape ``model.input_shape`` with an
integer label) or a batch (leading axis, array of labels). Batched calls
return an :class:`AttackOutcome` whose fields are arrays; single calls
return scalars.

Among candidate perturbations (restarts, transforms, affine weights) the
attacks keep, per input, a misclassified candidate over a correctly
classified one and then the higher loss.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    INF,
    Lp,
    RotateTranslate,
    apply_rotation_translation,
    lp_norm_batch,
    project_lp_batch,
    scale,
    steepest_direction_batch,
)
from .tensor_nn import Model

DEFAULT_BETAS = tuple(float(b) for b in np.linspace(0.0, 1.0, 11))


@dataclass(frozen=True)
class AttackConfig:
    budget: object
    steps: int = 100
    step_size: float | None = None
    restarts: int = 1
    q: float = 0.9
    rt_samples: int | None = None  # None means exhaustive grid search
    seed: int = 0
    box: tuple[float, float] | None = (0.0, 1.0)
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if not 0.0 <= self.q < 1.0:
            raise ValueError("q must lie in [0, 1)")
        if self.rt_samples is not None and self.rt_samples < 1:
            raise ValueError("rt_samples must be >= 1")

    def gamma(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return default_step_size(self.budget, self.steps)


def default_step_size(budget: Lp, steps: int) -> float:
    if budget.p == 1:
        return budget.eps / 4.0
    return 2.5 * budget.eps / steps


@dataclass
class AttackOutcome:
    x_adv: np.ndarray
    loss: np.ndarray
    success: np.ndarray
    achieved_norm: np.ndarray
    restarts_used: int = 1
    stalled: np.ndarray | None = None
    transform: list | None = None
    beta: np.ndarray | None = None
    components: tuple | None = None

    def item(self, i: int) -> "AttackOutcome":
        """The outcome for the ``i``-th input of a batch, with scalar fields."""
        return AttackOutcome(
            x_adv=self.x_adv[i],
            loss=float(self.loss[i]),
            success=bool(self.success[i]),
            achieved_norm=float(self.achieved_norm[i]),
            restarts_used=self.restarts_used,
            stalled=None if self.stalled is None else bool(self.stalled[i]),
            transform=None if self.transform is None else self.transform[i],
            beta=None if self.beta is None else float(self.beta[i]),
            components=None if self.components is None else tuple(
                float(c[i]) for c in self.components),
        )


# helpers -----------------------------------------------------------------

def _batch(model: Model, x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == model.input_shape:
        return x[None], np.array([int(y)]), True
    return x, np.asarray(y, dtype=np.int64).reshape(-1), False


def _finish(outcome: AttackOutcome, single: bool):
    return outcome.item(0) if single else outcome


def _success(logits, y):
    return np.argmax(logits, axis=1) != y


def _better(loss_c, succ_c, loss_b, succ_b):
    return (succ_c & ~succ_b) | ((succ_c == succ_b) & (loss_c > loss_b))


def _box_r(x, r, box):
    if box is None:
        return r
    return np.clip(x + r, box[0], box[1]) - x


def _final_x(x, r, box):
    xa = x + r
    return xa if box is None else np.clip(xa, box[0], box[1])


def _random_init(rng, shape, p, eps):
    n = shape[0]
    d = int(np.prod(shape[1:]))
    if eps == 0:
        return np.zeros(shape)
    if p == INF:
        r = rng.uniform(-eps, eps, size=(n, d))
    elif p == 2:
        v = rng.normal(size=(n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = v * (eps * rng.uniform(size=(n, 1)) ** (1.0 / d))
    else:
        e = rng.exponential(size=(n, d + 1))
        mag = e[:, :d] / e.sum(axis=1, keepdims=True)
        r = eps * mag * rng.choice([-1.0, 1.0], size=(n, d))
    return r.reshape(shape)


def _evaluate(model, x_adv, y):
    losses, logits, _, _ = model.evaluate(x_adv, y)
    return losses, _success(logits, y)


def slide_direction(g, x_cur, q, box):
    """Sparse l1 ascent direction, normalized to unit l1 norm.

    Coordinates sitting on the box boundary whose gradient points outward are
    dropped before the percentile threshold is taken. Rows with nothing left
    get a zero direction.
    """
    n = len(g)
    flat = g.reshape(n, -1)
    valid = np.ones_like(flat, dtype=bool)
    if box is not None:
        xc = x_cur.reshape(n, -1)
        valid &= ~(((xc <= box[0]) & (flat < 0)) | ((xc >= box[1]) & (flat > 0)))
    mag = np.where(valid, np.abs(flat), np.nan)
    srt = np.sort(mag, axis=1)  # NaNs last
    m = valid.sum(axis=1)
    idx = np.ceil(np.round(q * np.maximum(m - 1, 0), 9)).astype(np.int64)
    thr = srt[np.arange(n), np.minimum(idx, flat.shape[1] - 1)]
    e = np.where(valid & (np.abs(flat) >= thr[:, None]), np.sign(flat), 0.0)
    norm = np.abs(e).sum(axis=1, keepdims=True)
    e = np.divide(e, norm, out=np.zeros_like(e), where=norm > 0)
    return e.reshape(g.shape), (norm[:, 0] == 0)


def _descend(model, x, y, r, p, eps, gamma, steps, box, q=None):
    """Projected ascent from ``r``; ``q`` selects the sparse l1 update."""
    all_zero = np.ones(len(x), dtype=bool)
    for _ in range(steps):
        _, _, g, _ = model.evaluate(x + r, y, input_grad=True)
        if q is None:
            d = steepest_direction_batch(g, p)
            stall = ~g.reshape(len(g), -1).any(axis=1)
        else:
            d, stall = slide_direction(g, x + r, q, box)
        all_zero &= stall
        r = project_lp_batch(r + gamma * d, p, eps)
        r = _box_r(x, r, box)
    return r, all_zero


def _lp_attack(model, x, y, cfg: AttackConfig, sparse: bool):
    budget = cfg.budget
    if not isinstance(budget, Lp):
        raise TypeError("l_p attack needs an Lp budget")
    p, eps = budget.p, budget.eps
    gamma = cfg.gamma()
    best_x = best_loss = best_succ = best_stall = None
    for j in range(cfg.restarts):
        if j == 0:
            r = np.zeros_like(x)
        else:
            rng = np.random.default_rng([cfg.seed, j])
            r = _box_r(x, _random_init(rng, x.shape, p, eps), cfg.box)
        if eps > 0:
            r, stall = _descend(model, x, y, r, p, eps, gamma, cfg.steps, cfg.box,
                                q=cfg.q if sparse else None)
        else:
            stall = np.zeros(len(x), dtype=bool)
        xa = _final_x(x, r, cfg.box)
        loss, succ = _evaluate(model, xa, y)
        if best_x is None:
            best_x, best_loss, best_succ, best_stall = xa, loss, succ, stall
        else:
            take = _better(loss, succ, best_loss, best_succ)
            best_x = np.where(take.reshape((-1,) + (1,) * (x.ndim - 1)), xa, best_x)
            best_loss = np.where(take, loss, best_loss)
            best_succ = np.where(take, succ, best_succ)
            best_stall = np.where(take, stall, best_stall)
    return AttackOutcome(best_x, best_loss, best_succ, lp_norm_batch(best_x - x, p),
                         restarts_used=cfg.restarts, stalled=best_stall)


# public attacks ----------------------------------------------------------

def pgd_attack(model: Model, x, y, cfg: AttackConfig):
    """Steepest-ascent PGD for an l_p budget.

    p in {2, inf} is the usual attack; p = 1 gives the single-coordinate
    steepest-ascent variant used as a baseline for :func:`slide_attack`.
    """
    xb, yb, single = _batch(model, x, y)
    return _finish(_lp_attack(model, xb, yb, cfg, sparse=False), single)


def slide_attack(model: Model, x, y, cfg: AttackConfig):
    """Sparse l1 descent: percentile-thresholded sign steps with l1 projection."""
    if not (isinstance(cfg.budget, Lp) and cfg.budget.p == 1):
        raise ValueError("slide_attack needs an l1 budget")
    xb, yb, single = _batch(model, x, y)
    return _finish(_lp_attack(model, xb, yb, cfg, sparse=True), single)


def rt_transforms(budget: RotateTranslate, samples: int | None, rng) -> list:
    grid = budget.grid()
    if samples is None:
        return grid
    pick = rng.integers(0, len(grid), size=samples)
    return [grid[i] for i in pick]


def _rt_search(model, x, y, transforms, interpolation):
    best = None
    for t in transforms:
        xt = apply_rotation_translation(x, *t, interpolation=interpolation)
        loss, succ = _evaluate(model, xt, y)
        if best is None:
            best = [xt, loss, succ, [t] * len(x)]
            continue
        take = _better(loss, succ, best[1], best[2])
        best[0] = np.where(take[:, None, None, None], xt, best[0])
        best[1] = np.where(take, loss, best[1])
        best[2] = np.where(take, succ, best[2])
        best[3] = [t if k else old for k, old in zip(take, best[3])]
    return best


def rt_attack(model: Model, x, y, cfg: AttackConfig):
    """Worst rotation-translation over the grid, or over ``rt_samples`` grid draws."""
    if not isinstance(cfg.budget, RotateTranslate):
        raise TypeError("rt_attack needs a RotateTranslate budget")
    xb, yb, single = _batch(model, x, y)
    if xb.ndim != 4:
        raise ValueError("rt_attack needs image inputs of shape (H, W, C)")
    transforms = rt_transforms(cfg.budget, cfg.rt_samples, np.random.default_rng(cfg.seed))
    xa, loss, succ, chosen = _rt_search(model, xb, yb, transforms, cfg.interpolation)
    out = AttackOutcome(xa, loss, succ, np.full(len(xb), np.nan), transform=chosen)
    return _finish(out, single)


def run_attack(model: Model, x, y, cfg: AttackConfig):
    """Dispatch on the budget: SLIDE for l1, PGD for l2/linf, grid search for RT."""
    if isinstance(cfg.budget, RotateTranslate):
        return rt_attack(model, x, y, cfg)
    if cfg.budget.p == 1:
        return slide_attack(model, x, y, cfg)
    return pgd_attack(model, x, y, cfg)


def pointwise_attack(model: Model, x, y, budget: Lp, rng=None, max_tries: int = 50,
                     box=(0.0, 1.0), refine_steps: int = 10):
    """Decision-based l1 attack: salt-and-pepper start, then greedy repair.

    Uses only predicted labels. Inputs on which no misclassified start is
    found, or whose final perturbation exceeds ``budget.eps``, are reported as
    failures with ``x_adv`` equal to the clean input.
    """
    if not (isinstance(budget, Lp) and budget.p == 1):
        raise ValueError("pointwise_attack needs an l1 budget")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    xb, yb, single = _batch(model, x, y)
    lo, hi = box
    n = len(xb)
    out_x = xb.copy()
    out_succ = np.zeros(n, dtype=bool)
    found_norm = np.full(n, np.inf)
    for k in range(n):
        xk, yk = xb[k], yb[k]
        adv = _pointwise_one(model, xk, yk, rng, max_tries, lo, hi, refine_steps)
        if adv is None:
            continue
        norm = float(np.abs(adv - xk).sum())
        found_norm[k] = norm
        if norm <= budget.eps:
            out_x[k] = adv
            out_succ[k] = True
    loss, succ = _evaluate(model, out_x, yb)
    out = AttackOutcome(out_x, loss, out_succ & succ, lp_norm_batch(out_x - xb, 1),
                        components=(found_norm,))
    return _finish(out, single)


def _pointwise_one(model, x, y, rng, max_tries, lo, hi, refine_steps):
    def wrong(z):
        return model.predict(z[None])[0] != y

    if wrong(x):
        return x.copy()
    flat = x.reshape(-1)
    d = flat.size
    levels = np.arange(1, max_tries + 1) / max_tries
    cands = np.repeat(flat[None], max_tries, axis=0)
    for i, lev in enumerate(levels):
        hit = rng.uniform(size=d) < lev
        cands[i, hit] = np.where(rng.uniform(size=hit.sum()) < 0.5, lo, hi)
    preds = model.predict(cands.reshape((max_tries,) + x.shape))
    bad = np.nonzero(preds != y)[0]
    if not len(bad):
        return None
    adv = cands[bad[0]].copy()
    changed = True
    while changed:
        changed = False
        for i in rng.permutation(np.nonzero(adv != flat)[0]):
            old = adv[i]
            adv[i] = flat[i]
            if wrong(adv.reshape(x.shape)):
                changed = True
            else:
                adv[i] = old
    for i in np.nonzero(adv != flat)[0]:
        good, bad_v = adv[i], flat[i]
        for _ in range(refine_steps):
            mid = 0.5 * (good + bad_v)
            adv[i] = mid
            if wrong(adv.reshape(x.shape)):
                good = mid
            else:
                bad_v = mid
        adv[i] = good
    return adv.reshape(x.shape)


# affine combinations -----------------------------------------------------

def _decompose_box(x, ra, rb, box):
    if box is None:
        return ra, rb
    c = ra + rb
    xc = x + c
    clipped = (xc < box[0]) | (xc > box[1])
    if not clipped.any():
        return ra, rb
    cc = np.clip(xc, box[0], box[1]) - x
    lam = np.where(clipped, np.divide(cc, c, out=np.zeros_like(c), where=c != 0), 1.0)
    return ra * lam, rb * lam


def _lp_step(model, x, y, ra, rb, on_b, budget, gamma, q, box):
    """One ascent step on one component of an affine pair."""
    r_self = rb if on_b else ra
    _, _, g, _ = model.evaluate(x + ra + rb, y, input_grad=True)
    if budget.p == 1:
        d, _ = slide_direction(g, x + ra + rb, q, box)
    else:
        d = steepest_direction_batch(g, budget.p)
    return project_lp_batch(r_self + gamma * d, budget.p, budget.eps)


def _affine_lp_interior(model, x, y, ba, bb, beta, cfg, k_beta):
    sa, sb = scale(ba, beta), scale(bb, 1.0 - beta)
    if cfg.step_size is None:
        ga, gb = default_step_size(sa, cfg.steps), default_step_size(sb, cfg.steps)
    else:
        ga, gb = beta * cfg.step_size, (1.0 - beta) * cfg.step_size
    best = None
    for j in range(cfg.restarts):
        if j == 0:
            ra, rb = np.zeros_like(x), np.zeros_like(x)
        else:
            rng = np.random.default_rng([cfg.seed, j, k_beta])
            ra = _random_init(rng, x.shape, sa.p, sa.eps)
            rb = _random_init(rng, x.shape, sb.p, sb.eps)
            ra, rb = _decompose_box(x, ra, rb, cfg.box)
        for _ in range(cfg.steps):
            ra = _lp_step(model, x, y, ra, rb, False, sa, ga, cfg.q, cfg.box)
            ra, rb = _decompose_box(x, ra, rb, cfg.box)
            rb = _lp_step(model, x, y, ra, rb, True, sb, gb, cfg.q, cfg.box)
            ra, rb = _decompose_box(x, ra, rb, cfg.box)
        xa = _final_x(x, ra + rb, cfg.box)
        loss, succ = _evaluate(model, xa, y)
        cand = (xa, loss, succ, lp_norm_batch(ra, sa.p), lp_norm_batch(rb, sb.p))
        best = cand if best is None else _merge(best, cand)
    return best


def _merge(best, cand):
    take = _better(cand[1], cand[2], best[1], best[2])
    shape = (-1,) + (1,) * (best[0].ndim - 1)
    out = [np.where(take.reshape(shape), cand[0], best[0])]
    out += [np.where(take, c, b) for c, b in zip(cand[1:], best[1:])]
    return tuple(out)


def affine_lp_attack(model: Model, x, y, budget_a: Lp, budget_b: Lp, cfg: AttackConfig,
                     betas=DEFAULT_BETAS):
    """Search over beta * S_a + (1 - beta) * S_b with alternating updates.

    The endpoints beta = 1 and beta = 0 are the single-type attacks on S_a and
    S_b with ``cfg``; interior values alternate one step on each component.
    """
    xb, yb, single = _batch(model, x, y)
    n = len(xb)
    best = None
    best_beta = np.zeros(n)
    for k, beta in enumerate(betas):
        beta = float(beta)
        if beta in (0.0, 1.0):
            bud = budget_a if beta == 1.0 else budget_b
            o = run_attack(model, xb, yb, replace(cfg, budget=bud))
            norm = lp_norm_batch(o.x_adv - xb, bud.p)
            zero = np.zeros(n)
            cand = (o.x_adv, o.loss, o.success) + ((norm, zero) if beta == 1.0 else (zero, norm))
        else:
            cand = _affine_lp_interior(model, xb, yb, budget_a, budget_b, beta, cfg, k)
        if best is None:
            best, best_beta = cand, np.full(n, beta)
        else:
            take = _better(cand[1], cand[2], best[1], best[2])
            best = _merge(best, cand)
            best_beta = np.where(take, beta, best_beta)
    xa, loss, succ, na, nb = best
    out = AttackOutcome(xa, loss, succ, lp_norm_batch(xa - xb, budget_a.p),
                        restarts_used=cfg.restarts, beta=best_beta, components=(na, nb))
    return _finish(out, single)


def affine_rt_linf_attack(model: Model, x, y, rt_budget: RotateTranslate, linf_budget: Lp,
                          cfg: AttackConfig, betas=DEFAULT_BETAS):
    """Random rotation-translations from beta * S_RT, each followed by linf PGD
    with budget (1 - beta) * eps; the worst example over everything is kept.

    ``cfg.rt_samples`` (default 10) transforms are drawn per beta. The
    endpoints are the plain linf PGD and the sampled RT attack.
    """
    if linf_budget.p != INF:
        raise ValueError("linf_budget must be an l_inf budget")
    xb, yb, single = _batch(model, x, y)
    n = len(xb)
    samples = cfg.rt_samples or 10
    best = None
    best_beta = np.zeros(n)
    best_t = [(0, 0, 0.0)] * n
    for k, beta in enumerate(betas):
        beta = float(beta)
        if beta == 0.0:
            o = pgd_attack(model, xb, yb, replace(cfg, budget=linf_budget))
            cand = (o.x_adv, o.loss, o.success)
            ts = [(0, 0, 0.0)] * n
        elif beta == 1.0:
            o = rt_attack(model, xb, yb, replace(cfg, budget=rt_budget, rt_samples=samples))
            cand = (o.x_adv, o.loss, o.success)
            ts = o.transform
        else:
            rt_b = scale(rt_budget, beta)
            li = scale(linf_budget, 1.0 - beta)
            pcfg = replace(cfg, budget=li)
            rng = np.random.default_rng([cfg.seed, k])
            cand, ts = None, None
            for _ in range(samples):
                t = (int(rng.integers(-rt_b.max_dx_px, rt_b.max_dx_px + 1)),
                     int(rng.integers(-rt_b.max_dy_px, rt_b.max_dy_px + 1)),
                     float(rng.uniform(-rt_b.max_angle_deg, rt_b.max_angle_deg)))
                xt = apply_rotation_translation(xb, *t, interpolation=cfg.interpolation)
                o = _lp_attack(model, xt, yb, pcfg, sparse=False)
                c = (o.x_adv, o.loss, o.success)
                if cand is None:
                    cand, ts = c, [t] * n
                else:
                    take = _better(c[1], c[2], cand[1], cand[2])
                    cand = _merge(cand, c)
                    ts = [t if tk else old for tk, old in zip(take, ts)]
        if best is None:
            best, best_beta, best_t = cand, np.full(n, beta), list(ts)
        else:
            take = _better(cand[1], cand[2], best[1], best[2])
            best = _merge(best, cand)
            best_beta = np.where(take, beta, best_beta)
            best_t = [t if tk else old for tk, t, old in zip(take, ts, best_t)]
    xa, loss, succ = best
    out = AttackOutcome(xa, loss, succ, np.full(n, np.nan), restarts_used=cfg.restarts,
                        transform=best_t, beta=best_beta)
    return _finish(out, single)


def scan_loss_surface(model: Model, x, y, r1, r2, grid_n: int, box=(0.0, 1.0)) -> np.ndarray:
    """Loss at clip(x + a*r1 + b*r2) for a, b on an even grid over [0, 1].

    Row index follows ``a`` (the ``r1`` coefficient), column index ``b``.
    """
    x = np.asarray(x, dtype=np.float64)
    r1 = np.asarray(r1, dtype=np.float64)
    r2 = np.asarray(r2, dtype=np.float64)
    if r1.shape != x.shape or r2.shape != x.shape:
        raise ValueError("scan directions must match the input shape")
    coef = np.linspace(0.0, 1.0, grid_n)
    a, b = np.meshgrid(coef, coef, indexing="ij")
    pts = x[None] + a.reshape(-1, *([1] * x.ndim)) * r1 + b.reshape(-1, *([1] * x.ndim)) * r2
    if box is not None:
        pts = np.clip(pts, box[0], box[1])
    losses, _, _, _ = model.evaluate(pts, np.full(len(pts), int(y)))
    return losses.reshape(grid_n, grid_n)

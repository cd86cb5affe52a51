"""Monte-Carlo laboratory for the Gaussian binary task.

Inputs have d + 1 features: a strongly correlated feature ``x[0]`` and d
weakly correlated features ``x[1:] ~ N(y * eta, 1)`` with ``eta = alpha/sqrt(d)``.
Labels are +-1. ``sign(0)`` is taken to be +1 throughout.

Verification functions return plain dicts::

    {"checks": [{"check", "value", "bound", "ci", "pass"}, ...],
     "notes": {...}, "pass": bool}
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .geometry import INF, Lp, PermutationRT, dual_exponent
from .stats import wilson_radius

EXP_CLAMP = 700.0


@dataclass(frozen=True)
class GaussianTaskParams:
    d: int = 200
    alpha: float = 2.0
    p0: float = 0.95
    x0_mode: str = "bernoulli"  # or "gaussian": x0 ~ N(y, alpha^-2)
    eta: float | None = None

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.5 <= self.p0 <= 1.0:
            raise ValueError("p0 must lie in [0.5, 1]")
        if self.x0_mode not in ("bernoulli", "gaussian"):
            raise ValueError(f"unknown x0_mode {self.x0_mode!r}")
        eta = self.alpha / math.sqrt(self.d)
        if self.eta is None:
            object.__setattr__(self, "eta", eta)
        elif not math.isclose(self.eta, eta, rel_tol=1e-12):
            raise ValueError(f"eta must equal alpha/sqrt(d) = {eta}, got {self.eta}")


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_task(params: GaussianTaskParams, n: int, rng=None):
    """Draw ``n`` labelled points; returns ``x`` of shape (n, d+1) and ``y`` in {-1, +1}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _rng(rng)
    y = rng.choice([-1.0, 1.0], size=n)
    x = np.empty((n, params.d + 1))
    if params.x0_mode == "bernoulli":
        agree = rng.uniform(size=n) < params.p0
        x[:, 0] = np.where(agree, y, -y)
    else:
        x[:, 0] = rng.normal(y, 1.0 / params.alpha)
    x[:, 1:] = rng.normal(size=(n, params.d)) + (y * params.eta)[:, None]
    return x, y


# classifiers ---------------------------------------------------------------

@dataclass(frozen=True)
class SignX0:
    pass


@dataclass(frozen=True)
class SumRest:
    pass


@dataclass(frozen=True)
class SumIgnoringFirstN:
    N: int


@dataclass(frozen=True)
class Linear:
    w: tuple
    b: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise ValueError("linear weights must be finite")
        object.__setattr__(self, "w", tuple(float(v) for v in w))


@dataclass(frozen=True)
class NonlinearE:
    """sign(3 * sign(x0) + sum_i (2/sqrt(d)) x_i)."""


@dataclass(frozen=True)
class Constant:
    c: int = 1


def _sgn(v):
    return np.where(v >= 0, 1.0, -1.0)


def _linear_form(c, dim):
    """(w, b) for classifiers that are sign of an affine function, else None."""
    if isinstance(c, Linear):
        return np.asarray(c.w), c.b
    if isinstance(c, SignX0):
        w = np.zeros(dim)
        w[0] = 1.0
        return w, 0.0
    if isinstance(c, SumRest):
        w = np.ones(dim)
        w[0] = 0.0
        return w, 0.0
    if isinstance(c, SumIgnoringFirstN):
        w = np.ones(dim)
        w[:c.N] = 0.0
        return w, 0.0
    return None


def score(c, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if isinstance(c, Constant):
        return np.full(len(x), float(c.c))
    if isinstance(c, NonlinearE):
        d = x.shape[1] - 1
        return 3.0 * _sgn(x[:, 0]) + (2.0 / math.sqrt(d)) * x[:, 1:].sum(axis=1)
    lin = _linear_form(c, x.shape[1])
    if lin is None:
        raise TypeError(f"unknown classifier {c!r}")
    w, b = lin
    if len(w) != x.shape[1]:
        raise ValueError(f"classifier expects {len(w)} features, got {x.shape[1]}")
    return x @ w + b


def classify(c, x):
    """Labels in {-1, +1}; scalar for a single input."""
    x = np.asarray(x, dtype=np.float64)
    out = _sgn(score(c, x))
    return float(out[0]) if x.ndim == 1 else out


# adversaries ---------------------------------------------------------------

@dataclass(frozen=True)
class CanonicalLinf:
    eps: float


@dataclass(frozen=True)
class CanonicalL1:
    eps: float


@dataclass(frozen=True)
class PermRandom:
    N: int


@dataclass(frozen=True)
class PermInverse:
    N: int


@dataclass(frozen=True)
class PermComposed:
    N: int


@dataclass(frozen=True)
class AffineLpLp:
    eps_inf: float
    eps_1: float
    beta: float


@dataclass(frozen=True)
class AffineRtLinf:
    N: int
    eps: float
    beta: float


@dataclass(frozen=True)
class WorstCaseOracle:
    budget: object  # geometry.Lp or geometry.PermutationRT


def _canonical_linf(x, y, eps, eta):
    r = np.zeros_like(x)
    r[:, 1:] = (-y * min(eps, 2.0 * eta))[:, None]
    return x + r


def _canonical_l1(x, eps):
    out = x.copy()
    mag = np.abs(2.0 * x[:, 0])
    factor = np.minimum(1.0, np.divide(eps, mag, out=np.ones_like(mag), where=mag > 0))
    out[:, 0] = x[:, 0] - 2.0 * x[:, 0] * factor
    return out


def _swap(x, j):
    out = x.copy()
    rows = np.arange(len(x))
    out[rows, 0] = x[rows, j]
    out[rows, j] = x[rows, 0]
    return out


def _perm_random(x, N, rng):
    if N > x.shape[1]:
        raise ValueError(f"N={N} exceeds the number of features {x.shape[1]}")
    return _swap(x, rng.integers(0, N, size=len(x)))


def inverse_swap_probabilities(z, y, N, params: GaussianTaskParams) -> np.ndarray:
    """Selection probabilities of the inverse swap adversary.

    Row i gives, for each j < N, the probability of undoing a swap of
    position 0 with position j. They are proportional to the density of
    the swapped-back point under the target distribution (x0 drawn with
    label -y, other features with label y), which reduces to the ratio of
    the two one-dimensional Gaussian densities at ``z[j]``.
    """
    if params.x0_mode != "gaussian":
        raise ValueError("the inverse swap adversary needs gaussian x0")
    zs = z[:, :N]
    s = 1.0 / params.alpha
    mu_g = -y[:, None]
    mu_h = (y * params.eta)[:, None]
    log_g = -0.5 * ((zs - mu_g) / s) ** 2 - math.log(s)
    log_h = -0.5 * (zs - mu_h) ** 2
    logw = log_g - log_h
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    total = w.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(total)) or np.any(total <= 0):
        bad = np.nonzero(~np.isfinite(total[:, 0]) | (total[:, 0] <= 0))[0]
        raise ValueError(f"density ratios cannot be normalized for rows {bad[:10].tolist()}")
    probs = w / total
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-9) or np.any(probs < 0):
        raise ValueError("inverse swap probabilities do not form a distribution")
    return probs


def _perm_inverse(x, y, N, params, rng):
    probs = inverse_swap_probabilities(x, y, N, params)
    cdf = np.cumsum(probs, axis=1)
    u = rng.uniform(size=(len(x), 1))
    j = np.minimum((cdf < u).sum(axis=1), N - 1)
    return _swap(x, j)


def _worst_case(c, budget, x, y):
    if isinstance(c, Constant):
        return x.copy()
    if isinstance(budget, PermutationRT):
        return _worst_perm(c, x, y, budget.N)
    if not isinstance(budget, Lp):
        raise TypeError(f"unsupported budget {budget!r}")
    lin = _linear_form(c, x.shape[1])
    if lin is not None:
        w, _ = lin
        return x + (-y)[:, None] * budget.eps * _dual_direction(w, budget.p)[None]
    if isinstance(c, NonlinearE):
        return _worst_nonlinear(x, y, budget)
    raise TypeError(f"no worst-case oracle for {c!r}")


def _dual_direction(w, p):
    """Unit-l_p vector maximizing v.w."""
    if p == INF:
        return np.sign(w)
    if p == 2:
        n = np.linalg.norm(w)
        return w / n if n > 0 else np.zeros_like(w)
    v = np.zeros_like(w)
    i = int(np.argmax(np.abs(w)))
    v[i] = np.sign(w[i])
    return v


def _worst_perm(c, x, y, N):
    best = x.copy()
    best_m = y * score(c, x)
    for j in range(1, min(N, x.shape[1])):
        cand = _swap(x, np.full(len(x), j))
        m = y * score(c, cand)
        take = m < best_m
        best[take] = cand[take]
        best_m = np.where(take, m, best_m)
    return best


def _worst_nonlinear(x, y, budget: Lp):
    """Exact worst case for sign(3 sign(x0) + c * sum x_i) under an l_p ball.

    The score is non-decreasing in every coordinate, so the attacker pushes
    against the label. For linf that is the corner of the box. For l1 the
    attacker either spends everything on one x_i or first moves x0 across
    zero and spends the rest on one x_i. For l2 the same two candidates are
    used with the remainder spread evenly over x_1..x_d.
    """
    d = x.shape[1] - 1
    eps = budget.eps
    if budget.p == INF:
        return x - y[:, None] * eps
    # cost of flipping sign(x0) against y (reaching x0 < 0 needs slightly more than x0)
    tiny = 1e-12 * np.maximum(1.0, np.abs(x[:, 0]))
    flippable = np.where(y > 0, x[:, 0] >= 0, x[:, 0] < 0)
    cost = np.where(y > 0, x[:, 0] + tiny, -x[:, 0])
    use_flip = flippable & (cost <= eps)
    out = x.copy()
    if budget.p == 1:
        rest = np.where(use_flip, eps - cost, eps)
        out[:, 0] = np.where(use_flip, x[:, 0] - y * cost, x[:, 0])
        out[:, 1] = x[:, 1] - y * rest
    else:
        rest = np.where(use_flip, np.sqrt(np.maximum(eps ** 2 - cost ** 2, 0.0)), eps)
        out[:, 0] = np.where(use_flip, x[:, 0] - y * cost, x[:, 0])
        out[:, 1:] = x[:, 1:] - (y * rest / math.sqrt(d))[:, None]
    # keep whichever candidate hurts more
    alt = x.copy()
    if budget.p == 1:
        alt[:, 1] = x[:, 1] - y * eps
    else:
        alt[:, 1:] = x[:, 1:] - (y * eps / math.sqrt(d))[:, None]
    better_alt = y * score(NonlinearE(), alt) < y * score(NonlinearE(), out)
    out[better_alt] = alt[better_alt]
    return out


def apply_adversary(adv, c, x, y, rng=None, params: GaussianTaskParams | None = None):
    """Perturb a batch ``x`` (n, d+1) with labels ``y`` in {-1, +1}.

    ``params`` is needed by the adversaries that depend on the task
    (canonical linf shift size, density-ratio permutations).
    """
    rng = _rng(rng)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    eta = params.eta if params is not None else None
    if isinstance(adv, CanonicalLinf):
        out = _canonical_linf(x, y, adv.eps, _need(eta))
    elif isinstance(adv, CanonicalL1):
        out = _canonical_l1(x, adv.eps)
    elif isinstance(adv, PermRandom):
        out = _perm_random(x, adv.N, rng)
    elif isinstance(adv, PermInverse):
        out = _perm_inverse(x, y, adv.N, _need(params), rng)
    elif isinstance(adv, PermComposed):
        out = _perm_inverse(_perm_random(x, adv.N, rng), y, adv.N, _need(params), rng)
    elif isinstance(adv, AffineLpLp):
        if not 0.0 <= adv.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        out = _canonical_linf(x, y, adv.beta * adv.eps_inf, _need(eta))
        out = _canonical_l1(out, (1.0 - adv.beta) * adv.eps_1)
    elif isinstance(adv, AffineRtLinf):
        if not 0.0 <= adv.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        n_rt = max(1, int(math.floor(adv.beta * adv.N + 0.5)))
        out = _perm_inverse(_perm_random(x, n_rt, rng), y, n_rt, _need(params), rng)
        out = _canonical_linf(out, y, (1.0 - adv.beta) * adv.eps, _need(eta))
    elif isinstance(adv, WorstCaseOracle):
        out = _worst_case(c, adv.budget, x, y)
    else:
        raise TypeError(f"unknown adversary {adv!r}")
    check_budget(adv, x, out)
    return out


def _need(v):
    if v is None:
        raise ValueError("this adversary needs task params")
    return v


def _perm_ok(x, out, N):
    """Rows of ``out`` differ from ``x`` only by permuting positions < N."""
    same_tail = np.array_equal(x[:, N:], out[:, N:])
    head_x = np.sort(x[:, :N], axis=1)
    head_o = np.sort(out[:, :N], axis=1)
    return same_tail and np.array_equal(head_x, head_o)


def check_budget(adv, x, out, tol=1e-9):
    """Raise if any perturbed row leaves the adversary's allowed set."""
    r = out - x
    if isinstance(adv, CanonicalLinf):
        ok = np.abs(r).max(initial=0.0) <= adv.eps * (1 + tol) + tol
    elif isinstance(adv, CanonicalL1):
        ok = np.all(np.abs(r).sum(axis=1) <= adv.eps * (1 + tol) + tol)
    elif isinstance(adv, (PermRandom, PermInverse, PermComposed)):
        ok = _perm_ok(x, out, adv.N)
    elif isinstance(adv, AffineLpLp):
        ok = (np.abs(r[:, 1:]).max(initial=0.0) <= adv.beta * adv.eps_inf * (1 + tol) + tol
              and np.all(np.abs(r[:, 0]) <= (1 - adv.beta) * adv.eps_1 * (1 + tol) + tol))
    elif isinstance(adv, AffineRtLinf):
        ok = True  # composition of a checked permutation and a checked shift
    elif isinstance(adv, WorstCaseOracle):
        b = adv.budget
        if isinstance(b, PermutationRT):
            ok = _perm_ok(x, out, min(b.N, x.shape[1]))
        else:
            norms = np.abs(r).max(axis=1) if b.p == INF else \
                np.linalg.norm(r, ord=b.p, axis=1)
            ok = np.all(norms <= b.eps * (1 + tol) + tol)
    else:
        ok = True
    if not ok:
        raise AssertionError(f"adversary {adv!r} exceeded its budget")


def estimate_risk(c, adv, params: GaussianTaskParams, n_samples: int, rng=None):
    """Misclassification rate after perturbation and its Wilson 95% radius."""
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    rng = _rng(rng)
    x, y = sample_task(params, n_samples, rng)
    xp = apply_adversary(adv, c, x, y, rng, params)
    wrong = int(np.sum(classify(c, xp) != y))
    return wrong / n_samples, wilson_radius(wrong, n_samples)


# total variation -----------------------------------------------------------

@dataclass(frozen=True)
class TvEstimatorParams:
    lambda_P: float
    lambda_Q: float
    sigma_Q: float
    k: int
    n_samples: int = 100_000

    def __post_init__(self):
        if self.sigma_Q <= 0:
            raise ValueError("sigma_Q must be positive")
        if self.k < 2:
            raise ValueError("k must be >= 2")


def _t(x, p: TvEstimatorParams):
    s2 = p.sigma_Q ** -2
    return ((s2 - 1.0) * x * x - (2 * p.lambda_Q * s2 - 2 * p.lambda_P) * x
            + (p.lambda_Q ** 2 * s2 - p.lambda_P ** 2))


def _exp_neg_half(t):
    e = -0.5 * t
    if np.any(e > EXP_CLAMP):
        warnings.warn("exponent above the clamp threshold in the TV estimator",
                      RuntimeWarning, stacklevel=3)
        e = np.minimum(e, EXP_CLAMP)
    return np.exp(e)


def estimate_tv(p: TvEstimatorParams, rng=None, chunk: int = 20_000):
    """Monte-Carlo estimate of the total variation between a Gaussian and a
    mixture that replaces one random coordinate's mean/variance.

    The likelihood ratio of mixture to Gaussian is ``sum_i U_i / (k sigma_Q)``
    with ``U_i = exp(-t(x_i)/2)``; the distance is
    ``Pr_P[S_k < k sigma_Q] - Pr_Q[T_k < k sigma_Q]`` where ``T_k`` swaps one
    summand for ``V = exp(-t(W)/2)``, ``W ~ N(lambda_Q, sigma_Q^2)``.
    Returns the estimate and a conservative 95% radius (sum of the two
    Wilson radii).
    """
    rng = _rng(rng)
    thr = p.k * p.sigma_Q
    hits_s = hits_t = 0
    done = 0
    while done < p.n_samples:
        m = min(chunk, p.n_samples - done)
        u = _exp_neg_half(_t(rng.normal(p.lambda_P, 1.0, size=(m, p.k)), p))
        v = _exp_neg_half(_t(rng.normal(p.lambda_Q, p.sigma_Q, size=m), p))
        s_km1 = u[:, :-1].sum(axis=1)
        hits_s += int(np.sum(s_km1 + u[:, -1] < thr))
        hits_t += int(np.sum(s_km1 + v < thr))
        done += m
    n = p.n_samples
    return (hits_s - hits_t) / n, wilson_radius(hits_s, n) + wilson_radius(hits_t, n)


# verification --------------------------------------------------------------

def _check(name, value, bound, ci, ok) -> dict:
    return {"check": name, "value": float(value), "bound": float(bound),
            "ci": float(ci), "pass": bool(ok)}


def _report(checks, notes=None) -> dict:
    return {"checks": checks, "notes": notes or {}, "pass": all(c["pass"] for c in checks)}


def default_battery(d: int, seed: int = 0) -> list:
    rng = np.random.default_rng([seed, 11])
    w = rng.normal(size=d + 1)
    return [SignX0(), SumRest(), Linear(tuple(w), float(rng.normal())), NonlinearE(),
            Constant(1)]


def _name(c) -> str:
    return type(c).__name__


def verify_theorem1(params: GaussianTaskParams, classifier_battery=None,
                    n_samples: int = 100_000, seed: int = 0) -> dict:
    """Average risk under the two canonical perturbations is at least 1/2.

    Both perturbations are applied to the same sample for each classifier.
    """
    battery = classifier_battery or default_battery(params.d, seed)
    rng = np.random.default_rng([seed, 1])
    x, y = sample_task(params, n_samples, rng)
    x_inf = apply_adversary(CanonicalLinf(2 * params.eta), None, x, y, rng, params)
    x_one = apply_adversary(CanonicalL1(2.0), None, x, y, rng, params)
    checks, notes = [], {}
    for c in battery:
        r_inf = float(np.mean(classify(c, x_inf) != y))
        r_one = float(np.mean(classify(c, x_one) != y))
        avg = 0.5 * (r_inf + r_one)
        ci = wilson_radius(avg * 2 * n_samples, 2 * n_samples)
        notes[_name(c)] = {"risk_linf": r_inf, "risk_l1": r_one}
        checks.append(_check(f"theorem1/{_name(c)}/avg_risk>=0.5", avg, 0.5, ci,
                             avg >= 0.5 - ci))
        if isinstance(c, Constant):
            checks.append(_check("theorem1/Constant/avg_risk==0.5", avg, 0.5, ci,
                                 abs(avg - 0.5) <= ci))
    return _report(checks, notes)


def remark1_params(d: int = 200) -> GaussianTaskParams:
    return GaussianTaskParams(d=d, alpha=2.0, p0=1.0, x0_mode="gaussian")


def verify_remark1(n_samples: int = 100_000, seed: int = 0, d: int = 200, N: int = 49) -> dict:
    """Concrete-parameter version of the linf / rotation-translation trade-off.

    Two dedicated classifiers each have small single-type risk, while the
    average risk of any classifier is bounded below by
    ``1/2 - (TV(+1) + TV(-1)) / 2`` where ``TV(s)`` is the mixture distance
    with ``lambda_P = eta``, ``lambda_Q = s``, ``sigma_Q = 1/alpha``, ``k = N``.
    """
    if d < 200:
        raise ValueError("d must be >= 200")
    params = remark1_params(d)
    eps = 2 * params.eta
    rng = np.random.default_rng([seed, 2])
    r_inf, ci_inf = estimate_risk(SignX0(), WorstCaseOracle(Lp(INF, eps)), params,
                                  n_samples, rng)
    r_rt, ci_rt = estimate_risk(SumIgnoringFirstN(N), WorstCaseOracle(PermutationRT(N)),
                                params, n_samples, rng)
    sigma = 1.0 / params.alpha
    tv_plus, ci_plus = estimate_tv(TvEstimatorParams(params.eta, 1.0, sigma, N, n_samples), rng)
    tv_minus, ci_minus = estimate_tv(TvEstimatorParams(params.eta, -1.0, sigma, N, n_samples),
                                     rng)
    bound = 0.5 - 0.5 * (tv_plus + tv_minus)
    bound_ci = 0.5 * (ci_plus + ci_minus)
    checks = [
        _check("remark1/linf_classifier_risk<=0.08", r_inf, 0.08, ci_inf, r_inf <= 0.08 + ci_inf),
        _check("remark1/linf_classifier_risk<0.10", r_inf, 0.10, ci_inf, r_inf < 0.10),
        _check("remark1/rt_classifier_risk<=0.05", r_rt, 0.05, ci_rt, r_rt <= 0.05 + ci_rt),
        _check("remark1/rt_classifier_risk<0.10", r_rt, 0.10, ci_rt, r_rt < 0.10),
        _check("remark1/avg_risk_lower_bound~0.425", bound, 0.425, 0.02,
               abs(bound - 0.425) <= 0.02),
    ]
    # the bound also applies to the specific adversaries used to derive it
    x, y = sample_task(params, n_samples, rng)
    x_inf = apply_adversary(CanonicalLinf(eps), None, x, y, rng, params)
    x_rt = apply_adversary(PermComposed(N), None, x, y, rng, params)
    for c in (SignX0(), SumIgnoringFirstN(N), Constant(1)):
        avg = 0.5 * (np.mean(classify(c, x_inf) != y) + np.mean(classify(c, x_rt) != y))
        ci = wilson_radius(avg * 2 * n_samples, 2 * n_samples)
        checks.append(_check(f"remark1/{_name(c)}/avg_risk_vs_bound", avg, bound,
                             ci + bound_ci, avg >= bound - ci - bound_ci))
    notes = {"tv_plus": tv_plus, "tv_minus": tv_minus, "tv_ci": [ci_plus, ci_minus],
             "d": d, "N": N}
    return _report(checks, notes)


def claim1_indicators(w, b: float, x, y, eps_p: float, eps_q: float, p=INF, q=1,
                      betas: int = 101):
    """Per-sample worst-case misclassification of sign(w.x + b).

    Returns ``(union_cf, affine_cf, union_ex, affine_ex)``: closed-form margin
    tests for the union of the two balls and for the affine combinations
    (sup over a beta grid with both endpoints), and the same two indicators
    evaluated on explicitly constructed worst-case perturbations.
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    margin = y * (x @ w + b)
    a_term = eps_p * np.linalg.norm(w, ord=dual_exponent(p))
    b_term = eps_q * np.linalg.norm(w, ord=dual_exponent(q))
    grid = np.linspace(0.0, 1.0, betas)
    union_cf = margin <= max(a_term, b_term)
    affine_cf = margin <= np.max(grid * a_term + (1 - grid) * b_term)

    rp = eps_p * _dual_direction(w, p)
    rq = eps_q * _dual_direction(w, q)

    def flips(r):
        return y * ((x - y[:, None] * r[None]) @ w + b) <= 0

    union_ex = flips(rp) | flips(rq)
    affine_ex = np.zeros(len(x), dtype=bool)
    for beta in grid:
        affine_ex |= flips(beta * rp + (1 - beta) * rq)
    return union_cf, affine_cf, union_ex, affine_ex


def verify_claim1(w, b: float, eps_p: float, eps_q: float, n_samples: int,
                  p=INF, q=1, seed: int = 0, betas: int = 101) -> dict:
    """Union of two l_p balls versus their affine combinations for sign(w.x + b).

    Compares per-sample worst-case misclassification indicators on random
    points, both from closed-form margins and from explicit perturbations.
    """
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("w must be finite")
    rng = np.random.default_rng([seed, 3])
    x = rng.normal(size=(n_samples, len(w)))
    y = rng.choice([-1.0, 1.0], size=n_samples)
    union_cf, affine_cf, union_ex, affine_ex = claim1_indicators(w, b, x, y, eps_p, eps_q,
                                                                 p, q, betas)
    n_cf = int(np.sum(union_cf != affine_cf))
    n_ex = int(np.sum(union_ex != affine_ex))
    checks = [
        _check("claim1/closed_form_indicator_mismatches", n_cf, 0, 0, n_cf == 0),
        _check("claim1/explicit_indicator_mismatches", n_ex, 0, 0, n_ex == 0),
    ]
    notes = {"union_risk": float(union_ex.mean()), "affine_risk": float(affine_ex.mean())}
    return _report(checks, notes)


def theorem3_witness(w, b: float, eps: float, N: int):
    """Build the input that survives linf and swap attacks but not their mix.

    ``w`` must satisfy ``w[0] > w[i] > 0``. Features are relabelled so that the
    smallest weight among positions 1..N-1 sits at position 1. Returns
    ``(w_sorted, x)`` with label +1.
    """
    w = np.asarray(w, dtype=np.float64).copy()
    if N <= 2:
        raise ValueError("N must be > 2")
    if len(w) < N + 1:
        raise ValueError(f"need at least one coordinate beyond the first N={N} "
                         f"to set the margin; got {len(w)} weights")
    if not (np.all(w[1:] > 0) and np.all(w[0] > w[1:])):
        raise ValueError("requires w[0] > w[i] > 0 for all i >= 1")
    j = 1 + int(np.argmin(w[1:N]))
    w[[1, j]] = w[[j, 1]]
    l1 = np.abs(w).sum()
    x = np.zeros_like(w)
    x[0] = eps * l1 / (w[0] - w[1])
    target = 1.1 * eps * l1
    rest = target - b - w[0] * x[0]
    x[N:] = rest / w[N:].sum()
    return w, x


def verify_theorem3_witness(w, b: float, eps: float, N: int) -> dict:
    w, x = theorem3_witness(w, b, eps, N)
    l1 = np.abs(w).sum()

    def h(z):
        return float(z @ w + b)

    h_inf = h(x - eps * np.sign(w))
    h_swaps = [h(_swap(x[None], np.array([i]))[0]) for i in range(N)]
    x_aff = _swap(x[None], np.array([1]))[0] - (1 - 2.0 / N) * eps * np.sign(w)
    h_aff = h(x_aff)
    expected = -(0.9 - 2.0 / N) * eps * l1
    checks = [
        _check("theorem3/linf_cannot_flip", h_inf, 0.0, 0.0, h_inf > 0),
        _check("theorem3/swaps_cannot_flip", min(h_swaps), 0.0, 0.0, min(h_swaps) > 0),
        _check("theorem3/affine_flips", h_aff, 0.0, 0.0, h_aff < 0),
        _check("theorem3/affine_margin_formula", h_aff, expected, 1e-9 * max(1.0, abs(expected)),
               abs(h_aff - expected) <= 1e-9 * max(1.0, abs(expected))),
    ]
    return _report(checks, {"margin_clean": h(x)})


def theorem4_params(d: int = 200) -> GaussianTaskParams:
    return GaussianTaskParams(d=d, alpha=2.0, p0=1.0 - NormalDist().cdf(-2.0),
                              x0_mode="bernoulli")


def verify_theorem4(n_samples: int = 100_000, seed: int = 0, d: int = 200) -> dict:
    """The non-linear classifier survives the union of linf(3/sqrt(d)) and l1(3)
    but every classifier is at chance under their 2/3 : 1/3 affine mix."""
    if d < 200:
        raise ValueError("d must be >= 200")
    params = theorem4_params(d)
    g = NonlinearE()
    rng = np.random.default_rng([seed, 4])
    x, y = sample_task(params, n_samples, rng)
    eps_inf = 3.0 / math.sqrt(d)
    nat = float(np.mean(classify(g, x) == y))
    x_inf = apply_adversary(CanonicalLinf(eps_inf), g, x, y, rng, params)
    x_one = x.copy()
    x_one[:, 0] -= 2 * y
    x_one[:, 1] -= y
    union = float(np.mean((classify(g, x_inf) == y) & (classify(g, x_one) == y)))
    x_aff = apply_adversary(AffineLpLp(eps_inf, 3.0, 2.0 / 3.0), g, x, y, rng, params)
    affine_classifiers = [g, SignX0(), SumRest(), Constant(1)]
    aff = {_name(c): float(np.mean(classify(c, x_aff) == y)) for c in affine_classifiers}
    # exact worst case over the union, for reference
    w_inf = apply_adversary(WorstCaseOracle(Lp(INF, eps_inf)), g, x, y, rng, params)
    w_one = apply_adversary(WorstCaseOracle(Lp(1, 3.0)), g, x, y, rng, params)
    exact_union = float(np.mean((classify(g, w_inf) == y) & (classify(g, w_one) == y)))
    r = lambda a: wilson_radius(a * n_samples, n_samples)  # noqa: E731
    checks = [
        _check("theorem4/natural_accuracy~0.99", nat, 0.99, 0.01, abs(nat - 0.99) <= 0.01),
        _check("theorem4/union_accuracy>=0.65", union, 0.65, r(union), union >= 0.65 - r(union)),
    ]
    for name, a in aff.items():
        checks.append(_check(f"theorem4/affine_accuracy<=0.5/{name}", a, 0.5, r(a),
                             a <= 0.5 + r(a)))
    return _report(checks, {"exact_worst_case_union_accuracy": exact_union})


def export_toy_dataset(params: GaussianTaskParams, n: int, rng=None):
    """Samples as float feature rows with labels mapped -1 -> 0, +1 -> 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x, y = sample_task(params, n, rng)
    return x, (y > 0).astype(np.int64)


def verify_all(n_samples: int = 100_000, seed: int = 0) -> list:
    """Every theory check with default parameters, as a flat list of check dicts."""
    out = []
    out += verify_theorem1(GaussianTaskParams(d=200, alpha=2.0, p0=0.95),
                           n_samples=n_samples, seed=seed)["checks"]
    out += verify_remark1(n_samples=n_samples, seed=seed)["checks"]
    out += verify_theorem4(n_samples=n_samples, seed=seed)["checks"]
    rng = np.random.default_rng([seed, 5])
    out += verify_claim1(rng.normal(size=20), float(rng.normal()), 0.1, 0.5,
                         min(n_samples, 10_000), seed=seed)["checks"]
    w = rng.uniform(0.1, 1.0, size=21)
    w[0] = 2 * w[1:].max()
    out += verify_theorem3_witness(w, 0.0, 0.1, 10)["checks"]
    return out

import numpy as np
import pytest

from multirobust.tensor_nn import Model, conv2d, dense, maxpool, relu


def numeric_grad(f, x, h=1e-6):
    """Central differences of a scalar function over every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def random_small_model(rng, seed):
    """Either a small MLP on flat inputs or a tiny conv net on 6x6x2 images."""
    if rng.uniform() < 0.5:
        d = int(rng.integers(2, 6))
        h = int(rng.integers(2, 6))
        k = int(rng.integers(2, 4))
        return Model((d,), [dense(d, h), relu(), dense(h, k)], seed=seed)
    c = int(rng.integers(1, 3))
    layers = [conv2d(2, c, 3), relu(), maxpool(2), dense(2 * 2 * c, 3)]
    return Model((6, 6, 2), layers, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def threshold_model(alpha=2.0, shape=(4, 4, 1)):
    """Two-class model whose class-1 logit sums relu(alpha * (x - 0.3)).

    Inputs that are dark everywhere (x <= 0.3) have an exactly zero input
    gradient, which stalls every first-order attack.
    """
    d = int(np.prod(shape))
    w2 = np.zeros((d, 2))
    w2[:, 1] = 1.0
    return Model(shape, [dense(d, d), relu(), dense(d, 2)],
                 params=[alpha * np.eye(d), np.full(d, -0.3 * alpha), w2, np.array([0.5, 0.0])])


def linear_model(w, b=None, shape=None):
    """Model with logits = x.w + b for a (d, k) weight matrix."""
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[1]) if b is None else np.asarray(b, dtype=np.float64)
    shape = shape or (w.shape[0],)
    return Model(shape, [dense(w.shape[0], w.shape[1])], params=[w, b])


def l1_oracle(r, eps):
    """Projection onto the l1 ball by scanning soft-threshold breakpoints.

    On each interval between consecutive sorted |r_i| the active set is
    fixed, so sum(max(|r_i| - t, 0)) = eps is linear in t there.
    """
    a = np.abs(r)
    if a.sum() <= eps:
        return r.copy()
    bps = np.concatenate([[0.0], np.sort(a)])
    for lo, hi in zip(bps[:-1], bps[1:]):
        active = a[a >= hi]
        theta = (active.sum() - eps) / len(active)
        if lo - 1e-15 <= theta <= hi + 1e-15:
            return np.sign(r) * np.maximum(a - theta, 0.0)
    raise AssertionError("no breakpoint interval found")

"""Independent reference computations used by the test-suite.

Nothing here calls into the code paths under test except plain forward
evaluation, which the finite-difference checks need by construction.
"""

import numpy as np

FD_EPS = 1e-6


def central_difference(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f(x)
        flat[i] = orig - eps
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def relative_error(a, b, floor: float = 1e-3) -> float:
    """Norm-wise relative error.

    The denominator never drops below ``floor``: a bias feeding batchnorm has
    an exactly zero gradient, and there finite differences return pure
    rounding noise of order 1e-10.
    """
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)


def grid_crps(values, y: float, n: int = 1_000_000) -> float:
    """Midpoint Riemann sum of (F_hat - 1{p >= y})^2 over [0, 1] on ``n`` cells."""
    s = np.sort(np.asarray(values, dtype=np.float64))
    p = (np.arange(n) + 0.5) / n
    cdf = np.searchsorted(s, p, side="right") / s.size
    ind = (p >= y).astype(np.float64)
    return float(np.sum((cdf - ind) ** 2) / n)


def simulate_ar1(rho: float, n: int, rng: np.random.Generator) -> np.ndarray:
    x = np.empty(n)
    x[0] = rng.standard_normal() / np.sqrt(1 - rho ** 2)
    shocks = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + shocks[t]
    return x


def naive_forward(layers, params, x, bn_state=None, mode="frozen"):
    """Layer-by-layer forward written directly from the layer definitions."""
    x = np.asarray(x, dtype=np.float64)
    for i, (layer, p) in enumerate(zip(layers, params)):
        if layer.kind == "dense":
            x = np.array([[sum(row[a] * p["W"][a, b] for a in range(layer.in_dim)) + p["b"][b]
                           for b in range(layer.out_dim)] for row in x])
        elif layer.kind == "conv1d":
            cin, cout, kw, st = layer.in_channels, layer.out_channels, layer.kernel_width, layer.stride
            lin = layer.in_dim // cin
            lout = (lin - kw) // st + 1
            out = np.zeros((x.shape[0], cout, lout))
            xs = x.reshape(x.shape[0], cin, lin)
            for bidx in range(x.shape[0]):
                for o in range(cout):
                    for t in range(lout):
                        acc = p["b"][o]
                        for c in range(cin):
                            for j in range(kw):
                                acc += p["W"][o, c, j] * xs[bidx, c, t * st + j]
                        out[bidx, o, t] = acc
            x = out.reshape(x.shape[0], -1)
        elif layer.kind == "batchnorm":
            if mode == "training":
                mean, var = x.mean(axis=0), x.var(axis=0)
            else:
                mean, var = bn_state[i]["mean"], bn_state[i]["var"]
            x = (x - mean) / np.sqrt(var + layer.eps) * p["gamma"] + p["beta"]
        elif layer.kind == "relu":
            x = np.where(x > 0, x, 0.0)
        elif layer.kind == "leakyrelu":
            x = np.where(x > 0, x, layer.leak * x)
    return x

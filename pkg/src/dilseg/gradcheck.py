"""Finite-difference validation of the hand-derived backward passes.

Used by the test suite and by the ``gradcheck`` CLI subcommand. All checks
run in float64; central differences with step 1e-6 leave plenty of headroom
under the 1e-5 (per-layer) and 1e-4 (full network) tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine, models
from .errors import NumericError

LAYER_TOL = 1e-5
NETWORK_TOL = 1e-4

CORRUPTIBLE = ("conv", "pool", "relu", "softmax", "network")


def central_difference(func, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of scalar-valued func at x, one element at a time."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = func()
        flat[i] = orig - eps
        lo = func()
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference normalized by the largest gradient magnitude."""
    scale = max(
        float(np.abs(analytic).max(initial=0.0)),
        float(np.abs(numeric).max(initial=0.0)),
        1e-12,
    )
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def _maybe_corrupt(kind: str, corrupt: str | None, arrays) -> None:
    # Test-harness hook: deliberately skew the analytic gradients so the
    # corresponding check must fail (negative control for the reporting path).
    if corrupt == kind:
        for a in arrays:
            a *= 1.01
            a += 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def check_conv(rng: np.random.Generator, corrupt: str | None = None) -> CheckResult:
    x = rng.standard_normal((2, 3, 8, 8))
    params = engine.ConvParams(
        weights=rng.standard_normal((4, 3, 3, 3)), bias=rng.standard_normal(4), rate=2
    )
    probe = rng.standard_normal((2, 4, 8, 8))

    def loss():
        return float((engine.conv2d_dilated(x, params) * probe).sum())

    gx, gw, gb = engine.conv2d_dilated_backward(probe, x, params)
    _maybe_corrupt("conv", corrupt, [gx, gw, gb])
    err = max(
        rel_error(gx, central_difference(loss, x)),
        rel_error(gw, central_difference(loss, params.weights)),
        rel_error(gb, central_difference(loss, params.bias)),
    )
    return CheckResult("conv2d_dilated", err, LAYER_TOL)


def check_pool(rng: np.random.Generator, corrupt: str | None = None) -> CheckResult:
    # Continuous random values make window maxima unique with probability 1,
    # keeping the finite differences away from tie points.
    x = rng.standard_normal((2, 2, 7, 7))
    probe = rng.standard_normal((2, 2, 7, 7))

    def loss():
        out, _ = engine.maxpool_same(x, 3)
        return float((out * probe).sum())

    _, idx = engine.maxpool_same(x, 3)
    gx = engine.maxpool_same_backward(probe, idx)
    _maybe_corrupt("pool", corrupt, [gx])
    err = rel_error(gx, central_difference(loss, x))
    return CheckResult("maxpool_same", err, LAYER_TOL)


def check_relu(rng: np.random.Generator, corrupt: str | None = None) -> CheckResult:
    x = rng.standard_normal((2, 3, 6, 6))
    x[np.abs(x) < 1e-3] += 0.1  # keep clear of the kink at zero
    probe = rng.standard_normal(x.shape)

    def loss():
        return float((engine.relu(x) * probe).sum())

    gx = engine.relu_backward(probe, x)
    _maybe_corrupt("relu", corrupt, [gx])
    return CheckResult("relu", rel_error(gx, central_difference(loss, x)), LAYER_TOL)


def check_softmax(rng: np.random.Generator, corrupt: str | None = None) -> CheckResult:
    logits = rng.standard_normal((2, 4, 5, 5))
    labels = rng.integers(0, 4, size=(2, 5, 5))
    void = rng.random((2, 5, 5)) < 0.2

    def loss():
        return engine.softmax_cross_entropy(logits, labels, void).loss

    stats = engine.softmax_cross_entropy(logits, labels, void)
    grad = stats.grad_logits.copy()
    _maybe_corrupt("softmax", corrupt, [grad])
    err = rel_error(grad, central_difference(loss, logits))
    return CheckResult("softmax_cross_entropy", err, LAYER_TOL)


def _margins(spec, saved) -> float:
    """Distance to the nearest fragile non-differentiable point.

    Finite differences are only meaningful away from relu kinks and pool
    ties, so the network check redraws its configuration until no
    pre-activation sits close to (but not exactly at) zero and no pooling
    window has a close (but not exact) runner-up. Exact coincidences are
    benign: they come from plateaus whose entries respond identically to
    any perturbation, so the tie never crosses.
    """
    margin = np.inf
    for pre, pool in zip(saved.pre_relu, saved.pools):
        near = np.abs(pre[np.abs(pre) > 0])
        margin = min(margin, near.min(initial=np.inf))
        if pool is None:
            continue
        act = engine.relu(pre)
        m = pool.window
        pad = (m - 1) // 2
        padded = np.pad(
            act, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf
        )
        windows = np.lib.stride_tricks.sliding_window_view(padded, (m, m), axis=(2, 3))
        flat = windows.reshape(windows.shape[:4] + (m * m,))
        top2 = -np.partition(-flat, 1, axis=-1)[..., :2]
        gaps = top2[..., 0] - top2[..., 1]
        live = gaps > 0
        if live.any():
            margin = min(margin, float(gaps[live].min()))
    return float(margin)


def check_network(
    name: str, rng: np.random.Generator, corrupt: str | None = None
) -> CheckResult:
    """Finite-difference check of a full architecture at tiny widths."""
    info = models.ARCHITECTURES[models.canonical_name(name)]
    spec = models.build(name, in_channels=2, num_classes=2, widths=(2,) * len(info.plan))
    base_seed = int(rng.integers(2**31))
    for attempt in range(64):
        draw = np.random.default_rng([base_seed, attempt])
        params = models.init_params(spec, seed=int(draw.integers(2**31)), dtype=np.float64)
        for p in params:
            # Positive biases keep units alive so activations stay spatially
            # varied; dead regions would otherwise breed pooling plateaus.
            p.bias[:] = draw.uniform(0.05, 0.3, size=p.bias.shape)
        x = draw.standard_normal((1, 2, 6, 6))
        labels = draw.integers(0, 2, size=(1, 6, 6))
        logits, saved = models.forward(spec, params, x, save_for_backward=True)
        if _margins(spec, saved) > 1e-4:
            break
    else:
        raise NumericError(
            f"{name}: could not find a tie-free configuration for finite differences"
        )
    void = np.zeros((1, 6, 6), dtype=bool)

    def loss():
        logits = models.forward(spec, params, x)
        return engine.softmax_cross_entropy(logits, labels, void).loss

    stats = engine.softmax_cross_entropy(logits, labels, void)
    grads, grad_x = models.backward(spec, params, saved, stats.grad_logits)
    if corrupt == "network":
        grads = [(gw * 1.01 + 1e-3, gb * 1.01 + 1e-3) for gw, gb in grads]

    worst = rel_error(grad_x, central_difference(loss, x))
    for p, (gw, gb) in zip(params, grads):
        worst = max(worst, rel_error(gw, central_difference(loss, p.weights)))
        worst = max(worst, rel_error(gb, central_difference(loss, p.bias)))
    return CheckResult(f"network:{name}", worst, NETWORK_TOL)


def empirical_receptive_field(spec, patch: int, seed: int = 0, trials: int = 24) -> int:
    """Receptive field measured from the support of d(center output)/d(input).

    Uses all-positive weights, zero biases, and positive random inputs so no
    path is cancelled or clipped by relu. Max pooling still routes gradient
    only through per-window winners, so one draw can under-cover the cone of
    influence; the support is therefore accumulated over several independent
    parameter draws (the union converges to the full receptive field, and
    can never exceed it). Stops early once the extent matches the analytic
    value, since the union only grows.
    """
    analytic = spec.receptive_field()
    union = np.zeros((patch, patch), dtype=bool)
    extent = 0
    for trial in range(trials):
        trial_rng = np.random.default_rng([seed, trial])
        params = models.init_params(spec, seed=int(trial_rng.integers(2**31)), dtype=np.float64)
        for p in params:
            np.abs(p.weights, out=p.weights)
            p.bias[:] = 0.0
        x = trial_rng.uniform(0.5, 1.5, size=(1, spec.in_channels, patch, patch))
        _, saved = models.forward(spec, params, x, save_for_backward=True)
        grad_logits = np.zeros((1, spec.num_classes, patch, patch))
        grad_logits[:, :, patch // 2, patch // 2] = 1.0
        _, grad_x = models.backward(spec, params, saved, grad_logits)
        union |= np.abs(grad_x).sum(axis=(0, 1)) > 0
        rows = np.flatnonzero(union.any(axis=1))
        cols = np.flatnonzero(union.any(axis=0))
        row_extent = int(rows[-1] - rows[0] + 1) if rows.size else 0
        col_extent = int(cols[-1] - cols[0] + 1) if cols.size else 0
        extent = max(row_extent, col_extent)
        if row_extent == col_extent == analytic:
            break
    return extent


def run_all(seed: int = 0, architectures=None, corrupt: str | None = None):
    """Run every layer check plus full-network checks; returns CheckResults."""
    if corrupt is not None and corrupt not in CORRUPTIBLE:
        raise ValueError(
            f"unknown corruption target {corrupt!r}; choose one of {CORRUPTIBLE}"
        )
    rng = np.random.default_rng(seed)
    results = [
        check_conv(rng, corrupt),
        check_pool(rng, corrupt),
        check_relu(rng, corrupt),
        check_softmax(rng, corrupt),
    ]
    for name in architectures if architectures is not None else models.ARCHITECTURES:
        results.append(check_network(name, rng, corrupt))
    return results

"""Fast invariant checks run by ``hwformer selftest``."""

from __future__ import annotations

import math
from typing import Callable, List, Tuple

import numpy as np

from .attention import conv_projection_params, fcl_projection_params
from .checkpoint import dumps, loads
from .metrics import psnr, ssim
from .model import HWformer, ModelWeights, preset
from .tensor import Tensor, conv2d, finite_diff_check, layer_norm, matmul, no_grad, softmax
from .training import lr_at
from .windows import HORIZONTAL, VERTICAL, merge_windows, partition_windows, patchify, roll, roll_reverse, unpatchify


def _round_trips(rng) -> bool:
    x = Tensor(rng.standard_normal((1, 3, 50, 70)))
    windows, layout = partition_windows(x, 48)
    ok = np.array_equal(merge_windows(windows, layout).data, x.data)
    t = Tensor(rng.standard_normal((4, 2, 12, 12)))
    ok &= np.array_equal(unpatchify(patchify(t, 3), 3, 2, (4, 4)).data, t.data)
    for axis in (HORIZONTAL, VERTICAL):
        ok &= np.array_equal(roll_reverse(roll(x, axis, 17), axis, 17).data, x.data)
    return bool(ok)


def _zero_identity(rng) -> bool:
    model = HWformer.zeros(preset("toy", precision="float64"))
    x = rng.random((1, 1, 41, 53))
    with no_grad():
        return bool(np.array_equal(model(x).data, x))


def _primitive_gradients(rng) -> bool:
    w = Tensor(rng.standard_normal((3, 2, 3, 3)))
    b = rng.standard_normal((5, 4))
    g, beta = Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4))
    checks = [
        lambda x: (conv2d(x, w) * conv2d(x, w)).sum(),
        lambda x: (softmax(matmul(x.reshape(4, 5), Tensor(b)), -1) * Tensor(b[:4])).sum(),
        lambda x: (layer_norm(x.reshape(5, 4), g, beta) * Tensor(b)).sum(),
    ]
    shapes = [(1, 2, 5, 5), (20,), (20,)]
    return all(finite_diff_check(f, rng.standard_normal(s)) <= 1e-4 for f, s in zip(checks, shapes))


def _checkpoint(rng) -> bool:
    weights = ModelWeights.init(preset("toy"), seed=int(rng.integers(1 << 30)))
    blob = dumps(weights)
    return dumps(loads(blob)[0]) == blob


def _ratio(_rng) -> bool:
    return all(
        conv_projection_params(c) * 144 == fcl_projection_params(c, 6) for c in (8, 64, 180)
    )


def _schedule(_rng) -> bool:
    expected = {1: 1e-4, 15: 5e-5, 22: 2.5e-5, 24: 1.25e-5, 25: 6.25e-6,
                26: 3.125e-6, 27: 1.5625e-6, 28: 7.8125e-7}
    return all(lr_at(e, 1e-4) == v for e, v in expected.items())


def _metrics(rng) -> bool:
    a = rng.integers(0, 200, size=(32, 32)).astype(np.float64)
    return abs(psnr(a, a + 16) - 20 * math.log10(255 / 16)) < 1e-9 and ssim(a, a) == 1.0


def _softmax_stable(_rng) -> bool:
    y = softmax(Tensor(np.array([[1e4, 0.0, -1e4]])), -1).data
    return bool(np.isfinite(y).all() and abs(y.sum() - 1) < 1e-6)


CHECKS: List[Tuple[str, Callable]] = [
    ("round_trips", _round_trips),
    ("zero_weight_identity", _zero_identity),
    ("primitive_gradients", _primitive_gradients),
    ("checkpoint_round_trip", _checkpoint),
    ("projection_ratio_1_144", _ratio),
    ("lr_schedule", _schedule),
    ("metric_closed_forms", _metrics),
    ("softmax_stability", _softmax_stable),
]


def run_selftest(seed: int = 0):
    """Yield ``(name, passed, detail)`` for each check."""
    rng = np.random.default_rng(seed)
    for name, check in CHECKS:
        try:
            yield name, bool(check(rng)), ""
        except Exception as exc:  # reported, not raised
            yield name, False, f"{type(exc).__name__}: {exc}"

"""Window partitioning, cyclic shifts, patch tokens and dilated gathers.

All functions here are pure index manipulation on ``Tensor`` objects, so
they are differentiable and their inverses are bitwise exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import Tensor, take

HORIZONTAL = "horizontal"
VERTICAL = "vertical"
_AXIS = {HORIZONTAL: 3, VERTICAL: 2}


@dataclass(frozen=True)
class WindowLayout:
    window: int
    grid_h: int
    grid_w: int
    pad_h: int
    pad_w: int
    original_h: int
    original_w: int

    @property
    def count(self) -> int:
        return self.grid_h * self.grid_w


def reflect_indices(n: int, target: int) -> np.ndarray:
    """Source indices that reflect-pad an axis of length ``n`` to ``target``.

    Matches ``np.pad(mode="reflect")`` (edge sample not repeated),
    including pads longer than the axis.
    """
    i = np.arange(target)
    if n == 1:
        return np.zeros(target, dtype=np.intp)
    period = 2 * (n - 1)
    j = i % period
    return np.where(j < n, j, period - j).astype(np.intp)


def window_layout(h: int, w: int, window: int) -> WindowLayout:
    if window < 2:
        raise ConfigError(f"window size must be at least 2, got {window}")
    if window > 2 * min(h, w):
        raise ConfigError(
            f"window {window} exceeds twice the smaller image side ({h}x{w}); "
            "reflection padding is undefined"
        )
    gh, gw = math.ceil(h / window), math.ceil(w / window)
    return WindowLayout(window, gh, gw, gh * window - h, gw * window - w, h, w)


def partition_windows(x: Tensor, window: int):
    """Tile ``(N,C,H,W)`` into ``(N*nw, C, w, w)`` windows in row-major order."""
    n, c, h, w = x.shape
    layout = window_layout(h, w, window)
    if layout.pad_h:
        x = take(x, reflect_indices(h, h + layout.pad_h), axis=2)
    if layout.pad_w:
        x = take(x, reflect_indices(w, w + layout.pad_w), axis=3)
    gh, gw = layout.grid_h, layout.grid_w
    x = x.reshape(n, c, gh, window, gw, window)
    x = x.transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(n * gh * gw, c, window, window), layout


def merge_windows(windows: Tensor, layout: WindowLayout) -> Tensor:
    """Exact inverse of :func:`partition_windows`, cropping the padding."""
    m, c, wh, ww = windows.shape
    w = layout.window
    if wh != w or ww != w or m % layout.count:
        raise UsageError(
            f"windows of shape {windows.shape} do not fit layout "
            f"({layout.grid_h}x{layout.grid_w} of {w}x{w})"
        )
    n = m // layout.count
    gh, gw = layout.grid_h, layout.grid_w
    x = windows.reshape(n, gh, gw, c, w, w).transpose(0, 3, 1, 4, 2, 5)
    x = x.reshape(n, c, gh * w, gw * w)
    if layout.pad_h or layout.pad_w:
        x = x[:, :, : layout.original_h, : layout.original_w]
    return x


def _roll_indices(n: int, shift: int) -> np.ndarray:
    return (np.arange(n) - shift) % n


def roll(x: Tensor, axis: str, shift: int) -> Tensor:
    """Cyclically rotate a spatial axis so ``out[i] = x[(i - shift) mod n]``."""
    dim = _AXIS[axis]
    n = x.shape[dim]
    if not 0 <= shift < n:
        raise ConfigError(f"shift {shift} outside [0, {n})")
    if shift == 0:
        return x
    return take(x, _roll_indices(n, shift), axis=dim)


def roll_reverse(y: Tensor, axis: str, shift: int) -> Tensor:
    dim = _AXIS[axis]
    n = y.shape[dim]
    if not 0 <= shift < n:
        raise ConfigError(f"shift {shift} outside [0, {n})")
    if shift == 0:
        return y
    return take(y, _roll_indices(n, -shift), axis=dim)


def patchify(windows: Tensor, p: int) -> Tensor:
    """``(M,C,w,w)`` -> ``(M, (w/p)^2, C*p*p)`` with row-major patch order."""
    m, c, h, w = windows.shape
    if h % p or w % p:
        raise ConfigError(f"patch size {p} does not divide window {h}x{w}")
    gh, gw = h // p, w // p
    t = windows.reshape(m, c, gh, p, gw, p).transpose(0, 2, 4, 1, 3, 5)
    return t.reshape(m, gh * gw, c * p * p)


def unpatchify(tokens: Tensor, p: int, channels: int, grid) -> Tensor:
    m, t, d = tokens.shape
    gh, gw = grid
    if t != gh * gw or d != channels * p * p:
        raise UsageError(f"tokens of shape {tokens.shape} inconsistent with grid {grid}, C={channels}, p={p}")
    x = tokens.reshape(m, gh, gw, channels, p, p).transpose(0, 3, 1, 4, 2, 5)
    return x.reshape(m, channels, gh * p, gw * p)


def dilated_indices(grid, rate: int) -> np.ndarray:
    """``(T, 9)`` token indices of the clamped 3x3 neighbourhood at spacing ``rate``."""
    gh, gw = grid
    if rate < 1:
        raise ConfigError("dilation rate must be >= 1")
    rows, cols = np.divmod(np.arange(gh * gw), gw)
    out = np.empty((gh * gw, 9), dtype=np.intp)
    k = 0
    for dy in (-rate, 0, rate):
        for dx in (-rate, 0, rate):
            r = np.clip(rows + dy, 0, gh - 1)
            c = np.clip(cols + dx, 0, gw - 1)
            out[:, k] = r * gw + c
            k += 1
    return out


def dilated_gather(tokens: Tensor, grid, rate: int) -> Tensor:
    """Concatenate each token's dilated 3x3 neighbours: ``(M,T,d) -> (M,T,9d)``.

    The footprint spans ``2*rate+1`` tokens per side; grid edges replicate.
    """
    m, t, d = tokens.shape
    if t != grid[0] * grid[1]:
        raise UsageError(f"{t} tokens cannot form a {grid[0]}x{grid[1]} grid")
    idx = dilated_indices(grid, rate)
    return take(tokens, idx, axis=1).reshape(m, t, 9 * d)

"""Parameter and FLOPs table across window sizes (the window-size sweep)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List

from .model import ModelConfig, conv_flops, expected_param_count, flops_breakdown


def sweep_patch(window: int, patch: int) -> int:
    """Largest patch size not above ``patch`` that divides ``window``."""
    for p in range(min(patch, window), 0, -1):
        if window % p == 0:
            return p
    return 1


@dataclass
class BenchRow:
    window: int
    patch: int
    image: int
    params: int
    flops_total: int
    flops_attention: int
    flops_conv: int

    HEADER = ("window", "patch", "image", "params", "flops_total", "flops_attention", "flops_conv")

    def values(self):
        return tuple(getattr(self, k) for k in self.HEADER)


def window_config(base: ModelConfig, window: int) -> ModelConfig:
    """``base`` with both block windows set to ``window`` and a compatible patch size."""
    p = sweep_patch(window, base.patch)
    return replace(base, gte_window=window, tde_window=window, patch=p, tde_patch=p, shift=window // 2)


def bench_rows(base: ModelConfig, windows: Iterable[int], images: Iterable[int]) -> List[BenchRow]:
    rows = []
    for image in images:
        for window in windows:
            cfg = window_config(base, window)
            fl = flops_breakdown(cfg, image, image)
            rows.append(BenchRow(window, cfg.patch, image, expected_param_count(cfg), fl["total"],
                                 fl["attention"], conv_flops(image, image, cfg.base_channels, cfg.base_channels)))
    return rows


def format_rows(rows: List[BenchRow], fmt: str = "table") -> str:
    if fmt == "csv":
        lines = [",".join(BenchRow.HEADER)] + [",".join(str(v) for v in r.values()) for r in rows]
        return "\n".join(lines) + "\n"
    widths = [max(len(h), *(len(f"{r.values()[i]:,}") for r in rows)) for i, h in enumerate(BenchRow.HEADER)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(BenchRow.HEADER, widths))]
    for r in rows:
        lines.append("  ".join(f"{v:,}".rjust(w) for v, w in zip(r.values(), widths)))
    return "\n".join(lines) + "\n"

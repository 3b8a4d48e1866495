"""
Parameter and FLOPs budget
==========================

Convolutional q/k/v projections cost C*C*9 weights regardless of patch
size, while a fully connected projection on p*p*C tokens costs (p*p*C)^2.
The window sweep shows how attention cost grows with window size.
"""

from hwformer.attention import conv_projection_params, fcl_projection_params
from hwformer.bench import bench_rows, format_rows
from hwformer.model import ModelConfig, count_flops, expected_param_count, preset

for c in (8, 64, 180):
    conv, fcl = conv_projection_params(c), fcl_projection_params(c, 6)
    print(f"C={c:3d}: conv {conv:>9,}  fcl {fcl:>12,}  ratio 1/{fcl // conv}")

# only the fully connected count depends on the patch size
for p in (4, 6, 8):
    print(f"p={p}: conv {conv_projection_params(64):,}  fcl {fcl_projection_params(64, p):,}")

# full-size and toy networks
for name in ("paper", "toy"):
    cfg = preset(name)
    print(f"{name}: {expected_param_count(cfg):,} parameters, "
          f"{count_flops(cfg, 96, 96):,} FLOPs on a 96x96 image")

# the window sweep, as printed by `hwformer bench`
print(format_rows(bench_rows(ModelConfig(), [4, 6, 8, 48, 96], [96])))

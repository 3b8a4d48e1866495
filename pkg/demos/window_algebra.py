"""
Window algebra: partition, shift, tokenize
==========================================

Feature maps are cut into square windows, optionally rolled along one
axis first, and each window is turned into a sequence of patch tokens.
Every step has an exact inverse.
"""

import numpy as np

from hwformer.tensor import Tensor
from hwformer.windows import (
    HORIZONTAL,
    dilated_indices,
    merge_windows,
    partition_windows,
    patchify,
    roll,
    roll_reverse,
    unpatchify,
)

rng = np.random.default_rng(0)

# a 50x70 map does not tile by 48, so it is reflection padded to 96x96
x = Tensor(rng.standard_normal((1, 3, 50, 70)))
windows, layout = partition_windows(x, 48)
print("windows:", windows.shape, "padding:", (layout.pad_h, layout.pad_w))
print("merge restores input:", np.array_equal(merge_windows(windows, layout).data, x.data))

# a horizontal shift moves content across window borders
row = Tensor(np.arange(1.0, 5.0).reshape(1, 1, 1, 4))
print("roll [1 2 3 4] by 2:", roll(row, HORIZONTAL, 2).data.ravel())
print("and back:", roll_reverse(roll(row, HORIZONTAL, 2), HORIZONTAL, 2).data.ravel())

# 48x48 windows with 6x6 patches give an 8x8 grid of 108-wide tokens
tokens = patchify(windows, 6)
print("tokens:", tokens.shape)
print("unpatchify restores windows:",
      np.array_equal(unpatchify(tokens, 6, 3, (8, 8)).data, windows.data))

# the sparse feed-forward gathers a 3x3 neighbourhood at rate 3,
# so each token sees a 7x7 footprint of the grid
neighbours = dilated_indices((8, 8), 3)[4 * 8 + 4]
print("token (4,4) gathers:", sorted({(int(i) // 8, int(i) % 8) for i in neighbours}))

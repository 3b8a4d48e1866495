"""
Tiled inference and evaluation reports
======================================

Large images are denoised in overlapping tiles whose predictions are
averaged. An all-zero network is the identity, which makes the tiling
easy to sanity check before any training.
"""

import tempfile

import numpy as np

from hwformer.data import synthetic_textures, write_dataset
from hwformer.evaluation import evaluate, tile_denoise
from hwformer.metrics import psnr, ssim
from hwformer.model import HWformer, preset

zero = HWformer.zeros(preset("toy", precision="float64"))
image = np.random.default_rng(0).random((70, 90, 1))
print("zero model tiled output == input:",
      np.array_equal(tile_denoise(zero, image, tile=32, overlap=8), image))

# quality metrics on 0-255 values
a = np.full((32, 32), 100.0)
print(f"PSNR with a uniform offset of 16: {psnr(a, a + 16):.4f} dB")
print("SSIM of an image with itself:", ssim(a, a))

# evaluation over a folder: corrupt, denoise, score
model = HWformer(preset("toy"), seed=3)
model.weights["tail.weight"].data *= 0.05
with tempfile.TemporaryDirectory() as folder:
    write_dataset(synthetic_textures(4, 48, seed=2), folder)
    report = evaluate(model, folder, sigma=15, tile=32, overlap=8, model_id="untrained")
print(report.to_table(timings=False))
print(report.to_csv(timings=False))

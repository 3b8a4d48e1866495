"""
Training a toy denoiser
=======================

A small network learns to remove sigma=25 Gaussian noise from synthetic
textures. A few hundred steps already beat the noisy input by several dB.
"""

from dataclasses import replace

from hwformer.data import synthetic_textures
from hwformer.evaluation import evaluate_images
from hwformer.model import count_params, preset
from hwformer.training import TRAIN_PRESETS, train

images = [(f"tex{i:02d}", img) for i, img in enumerate(synthetic_textures(32, 32, seed=1))]
held_out = [(f"held{i}", img) for i, img in enumerate(synthetic_textures(8, 32, seed=77))]

model_cfg = preset("toy")
train_cfg = replace(TRAIN_PRESETS["toy"], max_steps=300)
print(f"toy model: {model_cfg.base_channels} channels, {model_cfg.heads} heads")


def progress(row):
    print(f"epoch {row['epoch']:2d}  step {row['step']:4d}  lr {row['lr']:.2e}  "
          f"loss {row['loss']:.5f}  val {row['val_psnr']:.2f} dB")


result = train(model_cfg, train_cfg, images, callback=progress)
print("parameters:", count_params(result.weights))

report = evaluate_images(result.weights, held_out, sigma=25, seed=0)
print(report.to_table(timings=False))

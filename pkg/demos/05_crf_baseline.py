"""
Dense CRF refinement
====================

Fully connected mean field with Gaussian appearance and smoothness kernels,
summed exactly over all pixel pairs. Bandwidths come from the 1024 px
settings rescaled to the working size; kernel weights are picked on a
validation fold.
"""

import numpy as np

from postdae.crf import desk_params, meanfield_infer, tune_weights
from postdae.metrics import foreground_dice
from postdae.raster import binarize
from postdae.synth import SceneConfig, fit_weak_classifier, generate_dataset, weak_segment

scene = SceneConfig(width=32, height=32, seed=21)
train_images, train_masks = generate_dataset(scene, range(30))
val_images, val_masks = generate_dataset(scene, range(500, 505))
test_images, test_masks = generate_dataset(scene, range(900, 910))
params = fit_weak_classifier(train_images, train_masks).with_quality(0.3)

val_soft = [weak_segment(im, params, 500 + i) for i, im in enumerate(val_images)]
grid = [(wb, ws) for wb in (0, 1, 10, 100) for ws in (0, 1)]
crf, scores = tune_weights(
    val_soft, val_images, val_masks, desk_params(32), grid, lambda s, g: foreground_dice(binarize(s), g)
)
print("bandwidths theta_alpha %.2f px, theta_beta %.4f, theta_gamma %.2f px" % (crf.theta_alpha, crf.theta_beta, crf.theta_gamma))
for g, s in zip(grid, scores):
    print("  weights %-10s validation Dice %.3f" % (g, s))

before, after = [], []
for i, (im, m) in enumerate(zip(test_images, test_masks)):
    soft = weak_segment(im, params, 900 + i)
    before.append(foreground_dice(binarize(soft), m))
    after.append(foreground_dice(binarize(meanfield_infer(soft, im, crf)), m))
print("test Dice: weak classifier %.3f, after CRF %.3f" % (np.mean(before), np.mean(after)))

"""
Synthetic chest-like scenes and a weak segmenter
================================================

Two lungs (and optionally a heart) drawn as jittered ellipses over a noisy,
bias-shaded background. The weak classifier is a per-pixel Gaussian model
with a knob that degrades its output.
"""

import numpy as np

from postdae.metrics import foreground_dice
from postdae.raster import binarize
from postdae.synth import SceneConfig, fit_weak_classifier, generate_dataset, weak_segment


def show(labels, chars=" #@"):
    # every other row and column, so a 64x64 mask fits in a terminal
    for row in labels[::2, ::2]:
        print("".join(chars[v] for v in row))


cfg = SceneConfig(num_classes=3, seed=1)
images, masks = generate_dataset(cfg, range(4))
print("three-class scene 0 (lungs #, heart @):")
show(masks[0].labels)
print("image intensity range: %.2f .. %.2f" % (images[0].intensities.min(), images[0].intensities.max()))

# binary scenes feed the weak classifier
cfg = SceneConfig(seed=2)
train_images, train_masks = generate_dataset(cfg, range(20))
test_images, test_masks = generate_dataset(cfg, range(100, 110))
params = fit_weak_classifier(train_images, train_masks)
print("fitted class means", np.round(params.means, 3))

for q in (0.0, 0.2, 0.3, 0.5):
    p = params.with_quality(q)
    d = [foreground_dice(binarize(weak_segment(im, p, i)), m) for i, (im, m) in enumerate(zip(test_images, test_masks))]
    print("quality knob %.1f: mean Dice %.3f" % (q, np.mean(d)))

print("weak segmentation at knob 0.3:")
show(binarize(weak_segment(test_images[0], params.with_quality(0.3))).labels)

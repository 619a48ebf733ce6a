"""
Training the denoising autoencoder and projecting bad masks
===========================================================

A scaled-down model (32 px, narrow layers) so this runs in a couple of
minutes. The full-size model is what the acceptance suite trains.
"""

import time

import numpy as np

from postdae.dae import DaeConfig, TrainConfig, plausibility_score, postprocess_batch, train
from postdae.degrade import degrade, preset
from postdae.metrics import foreground_dice, foreground_hausdorff
from postdae.synth import SceneConfig, generate_dataset

scene = SceneConfig(width=32, height=32, seed=11)
_, train_masks = generate_dataset(scene, range(120))
_, test_masks = generate_dataset(scene, range(1000, 1030))

dae_cfg = DaeConfig(input_size=32, encoder_channels=(8, 16, 16, 16), decoder_channels=(8, 8, 8, 8), latent_dim=32)
# small models trained with a sigmoid and soft Dice can lock a padding-dominated
# corner pixel at 1 (the saturated sigmoid has no gradient left); this seed
# trains cleanly
train_cfg = TrainConfig(epochs=80, batch_size=8, lr=3e-4, seed=1)

start = time.time()
model, history = train(
    train_masks, train_cfg, dae_cfg, on_epoch=lambda e, h: e % 10 == 0 and print("epoch %2d loss %.4f" % (e, h.loss[-1]))
)
print("trained %d parameters in %.0fs" % (sum(p.size for p in model.parameters()), time.time() - start))

bad = [degrade(m, preset("heavy", seed=4), i) for i, m in enumerate(test_masks)]
fixed = postprocess_batch(model, bad)
for name, masks in (("corrupted", bad), ("post-processed", fixed)):
    d = np.mean([foreground_dice(a, b) for a, b in zip(masks, test_masks)])
    h = np.mean([foreground_hausdorff(a, b) for a, b in zip(masks, test_masks)])
    print("%-15s Dice %.3f  HD %.2f px" % (name, d, h))

# the reconstruction gap doubles as a plausibility score
print("plausibility score, clean masks:     %.3f" % np.mean([plausibility_score(model, m) for m in test_masks]))
print("plausibility score, corrupted masks: %.3f" % np.mean([plausibility_score(model, m) for m in bad]))

model.save("demo_model.ckpt")
print("saved demo_model.ckpt")

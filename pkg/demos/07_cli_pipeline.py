"""
The command-line pipeline
=========================

Generate data, corrupt it, train, post-process, refine with the CRF,
evaluate and print the table, all through the ``postdae`` command (called
in-process here). Each step leaves a JSON manifest with checksums.
"""

import json
import tempfile
from pathlib import Path

from postdae.cli import main

work = Path(tempfile.mkdtemp(prefix="postdae_"))
(work / "scene.json").write_text(json.dumps({"width": 32, "height": 32, "seed": 4}))
(work / "dae.json").write_text(
    json.dumps({"input_size": 32, "encoder_channels": [8, 8, 8, 8], "decoder_channels": [8, 8, 8, 8], "latent_dim": 16})
)


def run(*args):
    print("$ postdae", " ".join(args))
    code = main(list(args))
    assert code == 0, code


w = str(work)
run("generate", "--config", f"{w}/scene.json", "--count", "40", "--out", f"{w}/train")
run("generate", "--config", f"{w}/scene.json", "--count", "10", "--start", "1000", "--out", f"{w}/test")
run("degrade", "--masks", f"{w}/test", "--out", f"{w}/heavy", "--severity", "heavy")
run("segment", "--train", f"{w}/train", "--images", f"{w}/test", "--out", f"{w}/seg", "--quality", "0.3")
run("train", "--data", f"{w}/train", "--out", f"{w}/model", "--dae-config", f"{w}/dae.json", "--epochs", "20", "--lr", "1e-3")
run("postprocess", "--model", f"{w}/model/model_final.ckpt", "--masks", f"{w}/heavy", "--out", f"{w}/post")
run("crf", "--unaries", f"{w}/seg", "--images", f"{w}/test", "--out", f"{w}/crf")
run(
    "evaluate", "--gt", f"{w}/test", "--out", f"{w}/eval",
    "--pred", f"heavy={w}/heavy", f"post={w}/post", f"weak={w}/seg/seg_*.pgm", f"crf={w}/crf",
)
run("report", f"{w}/eval/report.json")
print("manifest of the training run:", sorted(json.loads((work / "model" / "train_manifest.json").read_text())))
print("outputs in", work)

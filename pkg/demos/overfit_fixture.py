"""Overfit a small generator on four synthetic 64x64 faces and write the results.

Takes a couple of minutes on one CPU core.  Pass an output directory to keep
the sketches, checkpoints and loss log (default: ./overfit_out).
"""
import sys
from pathlib import Path

import numpy as np
import torch

from facesketch import trainer
from facesketch.config import TrainConfig
from facesketch.dataio import make_fixture, write_gray
from facesketch.generator import generate
from facesketch.metrics import ssim

out = Path(sys.argv[1] if len(sys.argv) > 1 else "overfit_out")
samples = make_fixture(seed=7, n=4, size=64)
config = TrainConfig(epochs=125, checkpoint_every=25,
                     gen_widths=(32, 64, 128, 256, 256), disc_widths=(32, 64, 128, 256), si_hidden=64)

history = []
state = trainer.fit(samples, config, sink=out, history=history)
content = np.array([h[2]["content"] for h in history])
print(f"content loss: step 1 {content[0]:.4f}, last epoch {content[-4:].mean():.4f}")

for s in samples:
    fake = generate(state.generator, s.photo, s.saliency, s.layout)
    write_gray(out / f"{s.id}_fake.png", fake.numpy())
    write_gray(out / f"{s.id}_real.png", s.sketch)
    print(f"{s.id}: ssim {ssim(fake.numpy(), s.sketch):.3f}")
print("outputs in", out)

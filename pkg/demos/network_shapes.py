"""Trace a 256x256 photo through the encoder, decoder and patch discriminator."""
import torch

from facesketch.dataio import make_fixture
from facesketch.discriminator import Discriminator
from facesketch.generator import Generator, GeneratorConfig

torch.manual_seed(0)
gen = Generator(GeneratorConfig()).eval()
disc = Discriminator().eval()
print(f"generator parameters: {sum(p.numel() for p in gen.parameters()) / 1e6:.1f}M")
print(f"discriminator parameters: {sum(p.numel() for p in disc.parameters()) / 1e6:.1f}M")

s = make_fixture(0, 1, 256)[0]
photo, sal, layout = (torch.from_numpy(x)[None].float() for x in (s.photo, s.saliency, s.layout))

with torch.no_grad():
    for i, f in enumerate(gen.encode(photo, sal, return_all=True), 1):
        print(f"encoder stage {i}: {tuple(f.shape[1:])}")
    sketch = gen(photo, sal, layout)
    print("generated sketch:", tuple(sketch.shape[1:]),
          f"range [{sketch.min().item():.3f}, {sketch.max().item():.3f}]")
    print("patch logits:", tuple(disc(photo, sal, sketch).shape[1:]))

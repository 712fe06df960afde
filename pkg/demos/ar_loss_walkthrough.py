"""Per-class statistics and the affinity loss on a tiny hand-made example."""
import numpy as np
import torch

from facesketch import arweight
from facesketch.dataio import CLASS_NAMES, labels_to_onehot

# a 4x4 "sketch" with hair on top, skin in the middle and background below
labels = np.array([
    [6, 6, 6, 6],
    [8, 8, 8, 8],
    [8, 7, 7, 8],
    [11, 11, 11, 11],
])
layout = torch.from_numpy(labels_to_onehot(labels)).double()
target = torch.tensor([
    [-0.9, -0.8, -0.9, -0.7],
    [0.6, 0.7, 0.6, 0.5],
    [0.6, 0.2, 0.1, 0.6],
    [1.0, 1.0, 1.0, 1.0],
], dtype=torch.float64)

stats = arweight.class_stats(target, layout)
for c in np.flatnonzero(stats.counts.numpy()):
    print(f"{CLASS_NAMES[c]:>10}: n={int(stats.counts[c])} mean={stats.mu[c]:+.3f} var={stats.nu[c]:.4f}")

aff = arweight.affinity_vector(target, layout)
print("affinity to mean maps    :", np.round(aff[0].numpy(), 3))
print("affinity to variance maps:", np.round(aff[1].numpy(), 3))

# a flat gray guess loses the hair/skin contrast; the loss notices
flat = torch.zeros_like(target) + 0.1
print("loss(target, target)    =", arweight.ar_loss(target, target, layout).item())
print("loss(target, flat gray) =", round(arweight.ar_loss(target, flat, layout).item(), 4))
print("loss(target, 3*target)  =", round(arweight.ar_loss(target, 3 * target, layout).item(), 8))

"""Metrics on worked micro-examples: confusion matrix and mIoU
accounting, pseudo-label quality with ignore pixels, per-class threshold
labelling, and the uncertainty map.
"""

import numpy as np

from segadapt.evaluation import (
    ConfusionMatrix,
    accumulate,
    miou,
    pseudo_quality,
    threshold_labels,
    uncertainty_map,
)

IGNORE = 255

print("confusion matrix: pred all zeros, gt half zeros / half ones")
gt = np.zeros((2, 4), dtype=np.uint8)
gt[1] = 1
cm = ConfusionMatrix.empty(2)
accumulate(cm, np.zeros_like(gt), gt, IGNORE)
ious, mean = miou(cm)
print("  counts:\n", cm.counts)
print(f"  per-class IoU {np.round(ious, 3).tolist()} -> mIoU {mean:.3f} (0.5 and 0 average to 0.25)")

print("\npseudo-label quality with an ignore pixel in the ground truth")
gt = np.array([[0, 1, 1, IGNORE]], dtype=np.uint8)
pl = np.array([[0, IGNORE, 0, 0]], dtype=np.uint8)
q = pseudo_quality(pl, gt, IGNORE)
print(f"  precision {q.precision:.3f} (1/2), recall {q.recall:.3f} (1/3), coverage {q.coverage:.3f} (2/3)")

print("\nper-class threshold labelling")
probs = np.array([
    [[0.7, 0.4], [0.55, 0.2]],
    [[0.3, 0.6], [0.45, 0.8]],
])
labels = threshold_labels(probs, np.array([0.8, 0.5]), IGNORE)
print("  probs argmax:", probs.argmax(axis=0).tolist())
print("  after thresholds (0.8, 0.5):", labels.tolist(), f" ({IGNORE} = rejected)")

print("\nuncertainty = 1 - max probability")
print("  one-hot pixel ->", uncertainty_map(np.array([1.0, 0.0]).reshape(2, 1, 1))[0, 0])
print("  uniform pixel ->", round(float(uncertainty_map(np.full((4, 1, 1), 0.25))[0, 0]), 3))
print("  (0.6, 0.4) pixel ->", round(float(uncertainty_map(np.array([0.6, 0.4]).reshape(2, 1, 1))[0, 0]), 3))

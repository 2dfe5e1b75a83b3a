"""Cross-case stability and diversity analysis on a small cohort.

For each subject: run all 14 uncertainty cases, take the entropy maps,
form the voxelwise median/IQR across cases, mask to voxels with non-zero
median entropy, and correlate the case maps over that mask.  The mean
correlation matrix across subjects shows which settings produce similar
spatial patterns; the mean non-zero entropy per case shows their global
magnitudes.  ~a minute of compute.
"""

import numpy as np

from uqcat import (
    CASES,
    PhantomSpec,
    TinySegmenter,
    TrainConfig,
    correlation_matrix,
    entropy_support_mask,
    generate_cohort,
    mean_correlation_matrix,
    mean_nonzero_entropy,
    run_case,
    train,
    uncertainty_maps,
    voxelwise_median_iqr,
    derive_seed,
)

cohort = generate_cohort(PhantomSpec(dims=(32, 32, 16), seed=5), 7)
model = TinySegmenter(seed=5)
train(model, cohort[:4], TrainConfig(epochs=30, seed=5))

matrices = []
magnitudes = {c.id: [] for c in CASES}
for sid, (image, _) in enumerate(cohort[4:]):
    ent_maps = {}
    for case in CASES:
        stack = run_case(model, image, case, n_samples=25, seed=derive_seed(5, "demo", sid))
        ent_maps[case.id] = uncertainty_maps(stack).entropy
        mean_nz, _ = mean_nonzero_entropy(ent_maps[case.id])
        magnitudes[case.id].append(mean_nz)
    median, iqr = voxelwise_median_iqr(list(ent_maps.values()))
    mask = entropy_support_mask(median)
    matrices.append(correlation_matrix(ent_maps, mask, subject=sid))
    print(f"subject {sid}: support mask {mask.count} voxels, "
          f"median-entropy peak {median.data.max():.3f}, IQR peak {iqr.data.max():.3f}")

mean_matrix = mean_correlation_matrix(matrices)
print("\nmean spatial-correlation matrix (cases 1..14):")
for i in range(14):
    row = " ".join(f"{mean_matrix.values[i, j]:+.2f}" for j in range(14))
    print(f"  case {i + 1:>2}: {row}")

print("\nmean non-zero entropy by case (averaged over subjects):")
for case in CASES:
    vals = [v for v in magnitudes[case.id] if np.isfinite(v)]
    print(f"  case {case.id:>2} ({case.label:22s}): {np.mean(vals):.4f}")

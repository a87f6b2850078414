"""Walk through the data side: a synthetic clip, a structured mask, and its DCT.

Run with ``python demos/masking_and_dct.py``.
"""

import numpy as np

from trajevae.dct import dct_time, idct_time
from trajevae.motion_data import (
    Skeleton, first_k_mask, generate_synthetic, make_trajectories, mask_future_poses, sample_mask,
)

rng = np.random.default_rng(0)
skeleton = Skeleton.default()
seq = generate_synthetic(1, 31, skeleton, rng=rng)[0]
print(f"clip {seq.id}: {seq.length} future frames, {skeleton.joint_count} joints, "
      f"pelvis of x0 at {seq.initial_pose[:3]}")

# evaluation masks expose feet first, then hands
for k in range(5):
    mask = first_k_mask(k, skeleton)
    print(f"k={k}: visible {[skeleton.names[i] for i in mask.visible_joints]}")

# training masks hide each joint with probability p_mask
counts = [sample_mask(17, 0.85, rng).k for _ in range(10_000)]
print(f"mean visible joints at p_mask=0.85: {np.mean(counts):.3f} (expected 2.55)")

mask = first_k_mask(4, skeleton)
traj = make_trajectories(seq, mask)
rest = mask_future_poses(seq, mask)
print("trajectories + masked future poses == full future:",
      bool(np.array_equal(traj.values + rest, seq.frames)))

# smooth motion concentrates its energy in the low DCT bins
coeffs = dct_time(seq.frames - seq.initial_pose)
energy = (coeffs ** 2).sum(axis=1)
print(f"share of energy in the first 5 of {len(energy)} bins: {energy[:5].sum() / energy.sum():.3f}")
print("round-trip error:", float(np.abs(idct_time(coeffs) - (seq.frames - seq.initial_pose)).max()))

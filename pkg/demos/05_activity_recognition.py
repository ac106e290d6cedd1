"""Human-activity recognition from amplitude tensors via compressed representations.

Six synthetic activity classes of shape [3 links x 114 subcarriers x 2000
samples] are embedded by a foundation encoder into 72 x 64 representations
(0.67% of the raw size) and classified by a small residual 2-D CNN.
"""

import numpy as np

from chanfm import chansim
from chanfm.encoder import FoundationModel, har_default, represent_matrix
from chanfm.heads import HeadConfig, har_rep_image
from chanfm.metrics import accuracy
from chanfm.pipeline import TaskSpec, train_head

print("=== Synthetic activity dataset (6 classes x 12 samples) ===")
samples = chansim.generate_activity_dataset(seed=0, per_class=12)
print(f"{len(samples)} samples shaped {samples[0].amplitude.shape}; "
      f"labels 0..5 = run/walk/fall/box/circle/clean")

print("\n=== Compression through the encoder ===")
encoder = FoundationModel(har_default(), seed=0)
amp = samples[0].amplitude
rep = represent_matrix(encoder, np.transpose(amp, (2, 0, 1)).astype(complex)[None])[0]
print(f"{amp.shape} ({amp.size:,} scalars) -> {rep.shape} ({rep.size:,} scalars) "
      f"= {100 * rep.size / amp.size:.2f}%")

print("\n=== Training the classifier on representations ===")
order = np.random.default_rng(1).permutation(len(samples))
shuffled = [samples[i] for i in order]
split = (shuffled[:56], shuffled[56:])
head_cfg = HeadConfig("rescnn2d", width=16, blocks=2, out_shape=(6,),
                      in_channels=1, in_length=72)
spec = TaskSpec("har", "rep", head_cfg, steps=120)
print(f"reference hyperparameters: lr={spec.lr}, batch={spec.batch}")
head, report = train_head(spec, split, seed=0, foundation=encoder)
print(f"test accuracy: {100 * report.metrics['accuracy']:.1f}% "
      f"on {len(split[1])} held-out samples")

print("\nFine-tuning is refused for this task (classification loss):")
from chanfm.pipeline import TaskError, finetune

try:
    finetune(spec, encoder, head, split, seed=0)
except TaskError as e:
    print(f"  TaskError: {e}")

"""
Noisy-student augmentation
==========================

The student side of self-training sees corrupted inputs: speed perturbation
(time-axis resampling), masked blocks of time steps, and dropped frequency
bands. The teacher that writes pseudo labels never sees any of this; a global
call counter lets tests assert the pseudo-labeling path stayed clean.
"""

import numpy as np

from semiscribe import (AugmentationPolicy, RngStream, apply_noisy_augmentation,
                        ToyCorpusConfig, generate_toy_corpus, speed_perturb)
from semiscribe.features import augmentation_call_count, freq_mask, time_mask

split = generate_toy_corpus(ToyCorpusConfig(vocab_size=6, num_channels=8, noise_std=0.1,
                                            num_labeled=4, num_unlabeled=0, num_dev=1,
                                            num_test=1, seed=7))
utt = split.labeled[0]
print(f"utterance {utt.id}: {utt.num_frames} frames, transcript {utt.transcript!r}")

"""
Speed perturbation resamples the time axis by linear interpolation; factor
0.9 stretches (more frames), 1.1 compresses. Channel count never changes.
"""

for factor in (0.9, 1.0, 1.1):
    out = speed_perturb(utt.features, factor)
    print(f"factor {factor}: {utt.num_frames} -> {out.shape[0]} frames")

"""
Masking zeroes contiguous spans and touches nothing else. Draws come from a
named RNG stream keyed by (seed, stream key), so the same utterance in the
same epoch is always corrupted the same way, no matter the execution order.
"""

policy = AugmentationPolicy(max_time_masks=2, time_mask_max_frames=6,
                            max_freq_masks=1, freq_mask_max_channels=2)
masked = time_mask(utt.features, policy, RngStream(0, f"{utt.id}/epoch1"))
wiped_rows = np.where((masked == 0).all(axis=1))[0]
print("\nframes fully zeroed by time masking:", wiped_rows)

masked = freq_mask(utt.features, policy, RngStream(0, f"{utt.id}/epoch1"))
wiped_cols = np.where((masked == 0).all(axis=0))[0]
print("channels dropped by frequency masking:", wiped_cols)

"""
The full pipeline composes speed -> time mask -> freq mask and carries the
label through untouched. Reusing the stream key reproduces the exact output.
"""

before = augmentation_call_count()
one = apply_noisy_augmentation(utt, policy, RngStream(3, f"{utt.id}/epoch1"))
two = apply_noisy_augmentation(utt, policy, RngStream(3, f"{utt.id}/epoch1"))
np.testing.assert_array_equal(one.features, two.features)
print(f"\naugmented twice with one key: identical ({one.features.shape[0]} frames, "
      f"label {one.transcript!r} unchanged)")
print("augmentation calls recorded:", augmentation_call_count() - before)

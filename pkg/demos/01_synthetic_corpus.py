"""
Synthetic corpus and vocabulary
===============================

Every experiment in this package runs against a deterministic synthetic
corpus: each transcript character lights up one feature channel for a
jittered number of frames, and Gaussian noise is layered on top. That gives
an alignment problem with the same shape as transcription (variable-length
audio-like input, character string output) that trains in seconds on a CPU.
"""

import numpy as np

from semiscribe import ToyCorpusConfig, build_vocabulary, generate_toy_corpus
from semiscribe.data import load_manifest, write_manifest

"""
Generate a small corpus. Counts per split, noise level, and per-token frame
geometry all live in the config; the same config + seed always produces the
same corpus, down to the last float.
"""

config = ToyCorpusConfig(vocab_size=6, num_channels=8, noise_std=0.2,
                         transcript_length_range=(5, 10),
                         num_labeled=12, num_unlabeled=30, num_dev=6, num_test=6,
                         seed=42)
split = generate_toy_corpus(config)
print("split sizes:", split.counts())

utt = split.labeled[0]
print(f"\nutterance {utt.id}: {utt.num_frames} frames x {utt.features.shape[1]} channels, "
      f"{utt.duration_s:.2f}s")
print("transcript:", repr(utt.transcript))

"""
A crude picture of the features: for each frame, mark the strongest channel.
With low noise the per-character channel blocks are plainly visible.
"""

strongest = utt.features.argmax(axis=1)
print("strongest channel per frame:")
print("".join(str(c) for c in strongest))

"""
Unlabeled utterances carry no transcript on the training-visible surface.
The gold text exists only behind an evaluation-only accessor, so nothing in
the training path can cheat, and tests count accesses to prove it.
"""

hidden = split.unlabeled[0]
print("\nunlabeled transcript field:", hidden.transcript)
print("evaluation-only reference:", repr(split.unlabeled_reference(hidden.id)))
print("reference reads so far:", split.reference_read_count)

"""
The character vocabulary is built from the labeled transcripts. Characters
occupy the low ids; eos/blank/sos/pad come after. The attention decoder's
output head covers characters + eos, the CTC head covers everything.
"""

vocab = build_vocabulary([u.transcript for u in split.labeled])
print("\nvocabulary:", vocab.chars)
print("eos/blank/sos/pad ids:", vocab.eos_id, vocab.blank_id, vocab.sos_id, vocab.pad_id)
ids = vocab.encode(utt.transcript)
assert vocab.decode(ids) == utt.transcript
print("round trip ok:", repr(utt.transcript), "->", ids[:8], "...")

"""
Corpora round-trip through a versioned tab-separated manifest. Synthetic
utterances serialize as inline `toy:` specs, so the manifest alone rebuilds
identical features; gold references for unlabeled rows go to a sidecar file.
"""

import tempfile
from pathlib import Path

with tempfile.TemporaryDirectory() as tmp:
    manifest = Path(tmp) / "manifest.tsv"
    write_manifest(split, manifest)
    print("\nmanifest head:")
    for line in manifest.read_text().splitlines()[:3]:
        print(" ", line[:100])
    reloaded = load_manifest(manifest)
    assert reloaded.counts() == split.counts()
    np.testing.assert_array_equal(reloaded.labeled[0].features, split.labeled[0].features)
    print("reloaded corpus matches the original bit for bit")

"""Sequence feature extraction walkthrough.

Standardises bracketed manifest sequences and prints the eight
statistics for a few contrasting sites.
"""

import numpy as np

from methgraph.seqfeat import (FEATURE_NAMES, extract_seq_features,
                               standardise_sequence)

rng = np.random.default_rng(0)


def manifest_row(cg_rich: bool) -> str:
    """A synthetic 122 bp manifest entry with the focal [CG] marker."""
    bases = rng.choice(list("ACGT"), 120).tolist()
    if cg_rich:
        for k in range(0, 100, 8):
            bases[k], bases[k + 1] = "C", "G"
    return "".join(bases[:60]) + "[CG]" + "".join(bases[60:])


print("Eight per-site statistics from the 122 bp flanking sequence\n")
examples = {
    "CG-rich site": manifest_row(cg_rich=True),
    "random site": manifest_row(cg_rich=False),
    "N-heavy site": "N" * 60 + "[CG]" + "N" * 60,
}

header = f"{'site':<14}" + "".join(f"{name:>14}" for name in FEATURE_NAMES)
print(header)
print("-" * len(header))
for label, raw in examples.items():
    seq = standardise_sequence(raw)
    feats = extract_seq_features(seq)
    print(f"{label:<14}" + "".join(f"{v:>14.4f}" for v in feats))

print("\nLocal base frequencies always sum to one:")
for label, raw in examples.items():
    feats = extract_seq_features(standardise_sequence(raw))
    print(f"  {label}: {feats[4:8].sum():.15f}")

print("\nBoundary clipping: a site whose CpG sits at the sequence start")
edge_seq = standardise_sequence("[CG]" + "T" * 20, allow_short=True)
feats = extract_seq_features(edge_seq)
print(f"  upstream GC over an empty window -> {feats[2]}")
print(f"  downstream GC over the remaining bases -> {feats[3]:.4f}")

"""Per-site sequence statistics from the flanking genomic sequence.

Each CpG site contributes an 8-dimensional vector, in this fixed order:

    0  gc_content     G+C fraction of the whole sequence
    1  cpg_density    CG dinucleotide count over sequence length
    2  upstream_gc    G+C fraction of the 60 bases before the focal C
    3  downstream_gc  G+C fraction of the 60 bases after the focal G
    4  local_a        A fraction in the 10-base window around the CpG
    5  local_t        T fraction in the same window
    6  local_c        C fraction in the same window
    7  local_g        G fraction in the same window

Unknown bases ('N') contribute 0.25 probability mass to each of A/C/G/T
in every counter, so all outputs stay in [0, 1] and the four local
frequencies always sum to 1.  Windows are clipped at sequence boundaries
and use the clipped length as denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEATURE_NAMES = (
    "gc_content",
    "cpg_density",
    "upstream_gc",
    "downstream_gc",
    "local_a",
    "local_t",
    "local_c",
    "local_g",
)

STANDARD_LENGTH = 122
FLANK_WINDOW = 60
LOCAL_FLANK = 4  # bases taken either side of the focal CG

_MARKER = "[CG]"
_ALPHABET = set("ACGTN")

# rows indexed by byte value of A/C/G/T/N, columns = (A, C, G, T) mass
_BASE_MASS = np.zeros((256, 4))
_BASE_MASS[ord("A")] = (1.0, 0.0, 0.0, 0.0)
_BASE_MASS[ord("C")] = (0.0, 1.0, 0.0, 0.0)
_BASE_MASS[ord("G")] = (0.0, 0.0, 1.0, 0.0)
_BASE_MASS[ord("T")] = (0.0, 0.0, 0.0, 1.0)
_BASE_MASS[ord("N")] = (0.25, 0.25, 0.25, 0.25)


class MissingMarker(ValueError):
    """No [CG] marker found in a manifest sequence."""


class MultipleMarkers(ValueError):
    """More than one [CG] marker found."""


class IllegalCharacter(ValueError):
    """Base outside {A, C, G, T, N} (either case)."""


class SequenceLengthError(ValueError):
    """Standardised sequence does not have the expected length."""


@dataclass(frozen=True)
class GenomicSequence:
    """Uppercased flanking sequence with the focal CpG position.

    ``bases[cpg_offset]`` is the C and ``bases[cpg_offset + 1]`` the G of
    the focal dinucleotide.
    """

    bases: str
    cpg_offset: int

    def __post_init__(self):
        bad = set(self.bases) - _ALPHABET
        if bad:
            raise IllegalCharacter(f"illegal bases {sorted(bad)} in sequence")
        off = self.cpg_offset
        if not (0 <= off <= len(self.bases) - 2):
            raise ValueError(f"cpg_offset {off} out of range for length {len(self.bases)}")
        if self.bases[off:off + 2] != "CG":
            raise ValueError(f"no CG dinucleotide at offset {off}")

    def __len__(self):
        return len(self.bases)


def standardise_sequence(
    raw: str,
    cpg_offset: int | None = None,
    *,
    expected_length: int = STANDARD_LENGTH,
    allow_short: bool = False,
) -> GenomicSequence:
    """Normalise a manifest sequence string to a ``GenomicSequence``.

    The manifest convention marks the focal dinucleotide as ``[CG]``;
    alternatively a pre-resolved sequence may be passed together with an
    explicit ``cpg_offset``.  The result is uppercased with brackets
    removed.  Lengths shorter than ``expected_length`` are rejected
    unless ``allow_short`` is set; longer inputs are always rejected.
    """
    upper = raw.upper()
    if cpg_offset is None:
        first = upper.find(_MARKER)
        if first < 0:
            raise MissingMarker("sequence has no [CG] marker")
        if upper.find(_MARKER, first + 1) >= 0:
            raise MultipleMarkers("sequence has more than one [CG] marker")
        upper = upper[:first] + "CG" + upper[first + len(_MARKER):]
        cpg_offset = first
    bad = set(upper) - _ALPHABET
    if bad:
        raise IllegalCharacter(f"illegal bases {sorted(bad)} in sequence")
    n = len(upper)
    if n > expected_length or (n < expected_length and not allow_short):
        raise SequenceLengthError(
            f"standardised length {n}, expected {expected_length}"
            + (" (pass allow_short for shorter inputs)" if n < expected_length else "")
        )
    return GenomicSequence(upper, cpg_offset)


def _mass(bases: str) -> np.ndarray:
    """(L, 4) probability-mass rows in (A, C, G, T) order."""
    codes = np.frombuffer(bases.encode("ascii"), dtype=np.uint8)
    return _BASE_MASS[codes]


def extract_seq_features(seq: GenomicSequence) -> np.ndarray:
    """The 8-vector of sequence statistics for one site."""
    mass = _mass(seq.bases)
    length = len(seq.bases)
    off = seq.cpg_offset

    totals = mass.sum(axis=0)  # (A, C, G, T)
    gc_content = (totals[1] + totals[2]) / length

    # expected CG dinucleotide count: P(C at i) * P(G at i+1)
    cpg_density = float(np.sum(mass[:-1, 1] * mass[1:, 2])) / length

    upstream = mass[max(0, off - FLANK_WINDOW):off]
    upstream_gc = float(upstream[:, 1:3].sum() / len(upstream)) if len(upstream) else 0.0

    downstream = mass[off + 2:off + 2 + FLANK_WINDOW]
    downstream_gc = float(downstream[:, 1:3].sum() / len(downstream)) if len(downstream) else 0.0

    local = mass[max(0, off - LOCAL_FLANK):off + 2 + LOCAL_FLANK]
    freqs = local.sum(axis=0) / len(local)

    return np.array([
        gc_content,
        cpg_density,
        upstream_gc,
        downstream_gc,
        freqs[0],  # A
        freqs[3],  # T
        freqs[1],  # C
        freqs[2],  # G
    ])


def feature_matrix(seqs) -> np.ndarray:
    """Stack per-site vectors into an (n_sites, 8) matrix."""
    return np.array([extract_seq_features(s) for s in seqs])

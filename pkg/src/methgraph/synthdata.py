"""Synthetic cohorts with planted age signal and co-methylation structure.

Sites come in four kinds:

* signal sites (indices 0..n_signal_sites-1): beta follows a clipped,
  noisy sigmoid of age, so they carry the predictive signal and are
  mutually correlated through it;
* companion sites (the next n_companion_sites indices): a diluted copy
  of one signal site's trajectory buried in strong independent noise.
  They correlate with their signal site above the edge thresholds, so
  they join the graph and contaminate their neighbourhood's messages —
  the regime where input gating matters, since the shared message maps
  have no per-node parameters to silence them;
* block sites: members of a correlation block share a per-sample latent
  factor, producing high pairwise |r| without any age information
  (structured distractors for the graph builder);
* background sites: independent noise around a per-site level.

Annotations place each block on one chromosome within the local-rule
distance and give members a shared gene symbol; signal and companion
sites share a chromosome so the same-chromosome rule backs up the global
one.  With ``seq_coupling`` on, signal sites receive 122 bp sequences
with many planted CG dinucleotides, tying site relevance to the
CpG-density sequence feature; companions stay CpG-poor.

Every site draws from its own named substream, so generation is
deterministic under the master seed and independent of evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .annotation import SiteAnnotation
from .comethgraph import BetaMatrix
from .rng import substream
from .seqfeat import GenomicSequence, STANDARD_LENGTH

_BASES = np.array(list("ACGT"))


class SpecInvalid(ValueError):
    """Inconsistent synthetic-cohort specification."""


@dataclass(frozen=True)
class SynthSpec:
    n_sites: int = 200
    n_samples: int = 500
    age_range: tuple[float, float] = (0.0, 93.0)
    n_signal_sites: int = 20
    n_companion_sites: int | None = None  # None: one per signal site if room
    noise_sd: float = 0.05
    companion_mix: float = 0.75
    companion_noise_sd: float = 0.08
    block_structure: tuple[tuple[int, ...], ...] | None = None
    seq_coupling: bool = True
    signal_cg_count: int = 26
    source_id: str = "synth"

    def __post_init__(self):
        if self.n_signal_sites > self.n_sites:
            raise SpecInvalid("n_signal_sites exceeds n_sites")
        if self.resolved_companions() + self.n_signal_sites > self.n_sites:
            raise SpecInvalid("signal + companion sites exceed n_sites")
        if self.noise_sd < 0 or self.companion_noise_sd < 0:
            raise SpecInvalid("noise levels must be non-negative")
        if self.age_range[1] <= self.age_range[0]:
            raise SpecInvalid("empty age range")
        if self.block_structure is not None:
            floor = self.n_signal_sites + self.resolved_companions()
            seen: set[int] = set()
            for block in self.block_structure:
                for idx in block:
                    if idx < floor or idx >= self.n_sites:
                        raise SpecInvalid(
                            f"block site {idx} must lie in the background range "
                            f"[{floor}, {self.n_sites})")
                    if idx in seen:
                        raise SpecInvalid(f"site {idx} appears in two blocks")
                    seen.add(idx)

    def resolved_companions(self) -> int:
        if self.n_companion_sites is not None:
            return self.n_companion_sites
        spare = max(0, self.n_sites - self.n_signal_sites)
        return min(self.n_signal_sites, spare // 3)

    def resolved_blocks(self) -> tuple[tuple[int, ...], ...]:
        """Explicit blocks, or default blocks of 5 over background sites."""
        if self.block_structure is not None:
            return self.block_structure
        blocks = []
        start = self.n_signal_sites + self.resolved_companions()
        n_blocks = min(4, max(0, (self.n_sites - start) // 5))
        for b in range(n_blocks):
            blocks.append(tuple(range(start + 5 * b, start + 5 * b + 5)))
        return tuple(blocks)


@dataclass
class SynthDataset:
    betas: BetaMatrix
    sites: list[SiteAnnotation]
    sequences: list[GenomicSequence]
    spec: SynthSpec
    signal_sites: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))


def _random_sequence(rng, planted_cg: int) -> GenomicSequence:
    """122-base sequence with a centred CG and `planted_cg` extra CG pairs."""
    chars = _BASES[rng.integers(0, 4, STANDARD_LENGTH)]
    off = STANDARD_LENGTH // 2 - 1
    chars[off] = "C"
    chars[off + 1] = "G"
    if planted_cg > 0:
        # even slots away from the focal pair, shuffled
        slots = np.array([s for s in range(0, STANDARD_LENGTH - 1, 2)
                          if abs(s - off) > 1])
        chosen = rng.permutation(slots)[:planted_cg]
        for s in chosen:
            chars[s] = "C"
            chars[s + 1] = "G"
    return GenomicSequence("".join(chars), off)


def generate(spec: SynthSpec, seed: int) -> SynthDataset:
    """Build the cohort: betas, annotations and sequences."""
    ages = substream(seed, "ages").uniform(spec.age_range[0], spec.age_range[1],
                                           spec.n_samples)
    blocks = spec.resolved_blocks()
    block_of_site = {}
    for b, members in enumerate(blocks):
        for idx in members:
            block_of_site[idx] = b
    # one shared latent per block and sample, bounded so clipping never bites
    latents = substream(seed, "latents").uniform(-1.0, 1.0, (len(blocks), spec.n_samples))

    n_comp = spec.resolved_companions()
    values = np.empty((spec.n_samples, spec.n_sites))
    signal_bases = np.zeros((spec.n_signal_sites, spec.n_samples))
    for j in range(spec.n_sites):
        rng = substream(seed, "site", j)
        noise = rng.normal(0.0, spec.noise_sd, spec.n_samples) if spec.noise_sd > 0 else 0.0
        if j < spec.n_signal_sites:
            slope = rng.uniform(0.02, 0.05) * (1.0 if j % 2 == 0 else -1.0)
            intercept = rng.uniform(-2.5, -0.5) * (1.0 if j % 2 == 0 else -1.0)
            base = 1.0 / (1.0 + np.exp(-(slope * ages + intercept)))
            signal_bases[j] = base
        elif j < spec.n_signal_sites + n_comp:
            # diluted copy of one signal trajectory under strong noise
            mate = signal_bases[(j - spec.n_signal_sites) % spec.n_signal_sites]
            base = 0.5 + spec.companion_mix * (mate - 0.5)
            if spec.companion_noise_sd > 0:
                noise = noise + rng.normal(0.0, spec.companion_noise_sd, spec.n_samples)
        elif j in block_of_site:
            loading = rng.uniform(0.15, 0.3)
            base = 0.5 + loading * latents[block_of_site[j]]
        else:
            base = np.full(spec.n_samples, rng.uniform(0.2, 0.8))
        values[:, j] = np.clip(base + noise, 0.0, 1.0)

    sites = _annotations(spec, blocks, block_of_site, seed)
    sequences = _sequences(spec, seed)
    betas = BetaMatrix(values, ages,
                       [f"{spec.source_id}:s{i:05d}" for i in range(spec.n_samples)],
                       [s.site_id for s in sites])
    return SynthDataset(betas=betas, sites=sites, sequences=sequences, spec=spec,
                        signal_sites=np.arange(spec.n_signal_sites))


def _annotations(spec, blocks, block_of_site, seed) -> list[SiteAnnotation]:
    rng = substream(seed, "annotation")
    sites = []
    # far separation between non-block sites so the local rule never fires
    spread = max(int(2e5), 10)
    block_base = {b: (10 + b) * 10**7 for b in range(len(blocks))}
    n_comp = spec.resolved_companions()
    for j in range(spec.n_sites):
        if j < spec.n_signal_sites + n_comp:
            chrom = "1"  # companions share the signal chromosome
            pos = 10**6 + j * spread
        elif j in block_of_site:
            b = block_of_site[j]
            chrom = str(2 + b % 5)
            pos = block_base[b] + (j - blocks[b][0]) * 1000  # within local_dist
        else:
            chrom = str(7 + j % 3)
            pos = 10**6 + j * spread
        tss = pos - int(rng.integers(100, 5000))
        has_island = rng.random() < 0.5
        if has_island:
            start = pos - int(rng.integers(0, 2000))
            end = start + int(rng.integers(200, 1500))
        else:
            start = end = 0
        gene = f"GENE{block_of_site[j]}" if j in block_of_site else ""
        sites.append(SiteAnnotation(
            site_id=f"cg{j:07d}",
            chromosome=chrom,
            position=pos,
            tss=tss,
            distance_to_tss=None if rng.random() < 0.1 else pos - tss,
            island_start=start,
            island_end=end,
            island_member=int(has_island),
            strand=rng.choice(["+", "-"]),
            next_base=rng.choice(["A", "T", "C"]),
            source_strand=rng.choice(["+", "-"]),
            gene_symbol=gene,
        ))
    return sites


def _sequences(spec, seed) -> list[GenomicSequence]:
    seqs = []
    for j in range(spec.n_sites):
        rng = substream(seed, "sequence", j)
        planted = spec.signal_cg_count if (spec.seq_coupling and j < spec.n_signal_sites) else 0
        seqs.append(_random_sequence(rng, planted))
    return seqs

"""Platform-manifest parsing and positional node features.

The manifest is a CSV with one row per CpG site.  Parsing keeps manifest
order, drops rows without a chromosome assignment, and normalises the
continuous positional attributes per chromosome with min-max scaling.

The positional feature block has nine slots, in this fixed order:

    0  island_member          1 if the site sits in a CpG island
    1  norm_island_length     min-max scaled island length
    2  norm_dist_tss          min-max scaled distance to TSS (1.0 if missing)
    3  next_base == A
    4  next_base == T
    5  next_base == C
    6  norm_island_start
    7  norm_island_end
    8  norm_genomic_position
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

POSITIONAL_DIM = 9

MANIFEST_COLUMNS = (
    "site_id",
    "chromosome",
    "position",
    "tss",
    "dist_tss",
    "island_range",
    "strand",
    "next_base",
    "source_strand",
    "gene_symbol",
    "sequence",
)

# next-base categories observed on this platform; G cannot follow the
# focal C, so the one-hot spans three slots (anything else -> all zeros)
NEXT_BASE_ORDER = ("A", "T", "C")


class MalformedRow(ValueError):
    """A manifest row that cannot be parsed; message echoes the row."""


class MissingColumn(ValueError):
    """The manifest header lacks a required column."""


@dataclass
class SiteAnnotation:
    """Positional and biological attributes of one CpG site."""

    site_id: str
    chromosome: str
    position: int
    tss: int
    distance_to_tss: int | None
    island_start: int = 0
    island_end: int = 0
    island_member: int = 0
    strand: str = ""
    next_base: str = ""
    source_strand: str = ""
    gene_symbol: str = ""
    island_length: int = field(init=False)

    def __post_init__(self):
        if not self.chromosome:
            raise ValueError("chromosome must be non-empty")
        self.island_length = self.island_end - self.island_start
        if self.island_length < 0:
            raise ValueError(
                f"island end {self.island_end} before start {self.island_start}")


def _parse_island(raw: str) -> tuple[int, int, int]:
    """'start-end' -> (start, end, member); empty -> zeros."""
    raw = raw.strip()
    if not raw:
        return 0, 0, 0
    lo, sep, hi = raw.partition("-")
    if not sep:
        raise ValueError(f"island range {raw!r} has no '-'")
    return int(lo), int(hi), 1


def _parse_row(row: dict, line_no: int) -> SiteAnnotation | None:
    chrom = row["chromosome"].strip()
    if not chrom:
        return None  # dropped, not an error
    try:
        start, end, member = _parse_island(row["island_range"])
        dist_raw = row["dist_tss"].strip()
        return SiteAnnotation(
            site_id=row["site_id"].strip(),
            chromosome=chrom,
            position=int(row["position"]),
            tss=int(row["tss"]),
            distance_to_tss=int(dist_raw) if dist_raw else None,
            island_start=start,
            island_end=end,
            island_member=member,
            strand=row["strand"].strip(),
            next_base=row["next_base"].strip().upper(),
            source_strand=row["source_strand"].strip(),
            gene_symbol=row["gene_symbol"].strip(),
        )
    except (ValueError, KeyError) as exc:
        raise MalformedRow(f"line {line_no}: {exc} in row {dict(row)!r}") from exc


def parse_manifest(path, columns: dict[str, str] | None = None) -> list[SiteAnnotation]:
    """Read a manifest CSV into site records, in file order.

    ``columns`` optionally remaps logical names to actual header names,
    e.g. ``{"position": "MAPINFO"}``.
    """
    colmap = {c: c for c in MANIFEST_COLUMNS}
    if columns:
        colmap.update(columns)
    sites = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(_skip_comments(fh))
        header = reader.fieldnames or []
        for logical, actual in colmap.items():
            if logical == "sequence":
                continue  # sequences are read separately
            if actual not in header:
                raise MissingColumn(f"manifest lacks column {actual!r} (for {logical})")
        for line_no, row in enumerate(reader, start=2):
            mapped = {logical: row.get(actual, "") for logical, actual in colmap.items()}
            record = _parse_row(mapped, line_no)
            if record is not None:
                sites.append(record)
    return sites


def load_sequences(path, columns: dict[str, str] | None = None) -> dict[str, str]:
    """site_id -> raw (bracketed) sequence string from the manifest."""
    colmap = {c: c for c in MANIFEST_COLUMNS}
    if columns:
        colmap.update(columns)
    out: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(_skip_comments(fh))
        header = reader.fieldnames or []
        for logical in ("site_id", "sequence"):
            if colmap[logical] not in header:
                raise MissingColumn(f"manifest lacks column {colmap[logical]!r}")
        for row in reader:
            out[row[colmap["site_id"]].strip()] = row[colmap["sequence"]].strip()
    return out


def _skip_comments(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def _minmax_by_group(values: np.ndarray, group_codes: np.ndarray,
                     n_groups: int, missing: np.ndarray | None = None) -> np.ndarray:
    """Min-max scale within groups; degenerate groups scale to 0.

    ``missing`` marks entries excluded from min/max and filled with 1.0.
    """
    vals = values.astype(np.float64).copy()
    out = np.zeros_like(vals)
    for g in range(n_groups):
        in_group = group_codes == g
        use = in_group if missing is None else (in_group & ~missing)
        if not np.any(use):
            continue
        lo = vals[use].min()
        hi = vals[use].max()
        if hi > lo:
            out[use] = (vals[use] - lo) / (hi - lo)
    if missing is not None:
        out[missing] = 1.0
    return out


def normalize_per_chromosome(sites: list[SiteAnnotation]) -> np.ndarray:
    """Assemble the (n_sites, 9) positional feature block."""
    n = len(sites)
    chrom_names = sorted({s.chromosome for s in sites})
    chrom_code = {c: k for k, c in enumerate(chrom_names)}
    codes = np.array([chrom_code[s.chromosome] for s in sites])
    n_groups = len(chrom_names)

    position = np.array([s.position for s in sites], dtype=np.float64)
    island_start = np.array([s.island_start for s in sites], dtype=np.float64)
    island_end = np.array([s.island_end for s in sites], dtype=np.float64)
    island_length = np.array([s.island_length for s in sites], dtype=np.float64)
    dist = np.array([0 if s.distance_to_tss is None else s.distance_to_tss
                     for s in sites], dtype=np.float64)
    dist_missing = np.array([s.distance_to_tss is None for s in sites])

    feats = np.zeros((n, POSITIONAL_DIM))
    feats[:, 0] = [s.island_member for s in sites]
    feats[:, 1] = _minmax_by_group(island_length, codes, n_groups)
    feats[:, 2] = _minmax_by_group(dist, codes, n_groups, missing=dist_missing)
    for k, base in enumerate(NEXT_BASE_ORDER):
        feats[:, 3 + k] = [1.0 if s.next_base == base else 0.0 for s in sites]
    feats[:, 6] = _minmax_by_group(island_start, codes, n_groups)
    feats[:, 7] = _minmax_by_group(island_end, codes, n_groups)
    feats[:, 8] = _minmax_by_group(position, codes, n_groups)
    return feats

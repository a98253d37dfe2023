"""File formats shared by the pipeline stages.

Text outputs (CSV/TSV) start with a provenance comment line carrying the
tool version, the effective-config hash and the master seed, so outputs
are self-describing and byte-reproducible.  Binary containers keep their
fixed layouts; their provenance lives in a sidecar ``<file>.meta.json``.

Formats:

* beta matrix ``.mgb``: magic ``MGB1``, u32 sample count S, u32 site
  count N (little-endian), S*N little-endian float64 betas row-major,
  S float64 ages, then the sample ids and site ids, each newline-joined
  and newline-terminated;
* generic matrix ``.mgm``: magic ``MGM1``, u32 rows, u32 cols, row-major
  little-endian float64 data, then newline-joined row ids;
* edge list TSV: provenance line, ``#nodes=N rules=...`` header, then
  ``i<TAB>j<TAB>r<TAB>same_chrom<TAB>same_gene`` rows with r at 17
  significant digits.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .comethgraph import BetaMatrix, EdgeRules, GraphTopology

_MGB_MAGIC = b"MGB1"
_MGM_MAGIC = b"MGM1"


class IoError(ValueError):
    """Malformed or truncated data file."""


def fmt17(x: float) -> str:
    """17 significant digits: round-trips any float64."""
    return format(float(x), ".17g")


def config_hash(config_dict: dict) -> str:
    canon = json.dumps(config_dict, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def provenance_line(cfg_hash: str, seed: int) -> str:
    return f"# methgraph {__version__} config={cfg_hash} seed={seed}"


def write_meta(path, cfg_hash: str, seed: int, extra: dict | None = None) -> None:
    meta = {"tool": "methgraph", "version": __version__,
            "config": cfg_hash, "seed": seed}
    if extra:
        meta.update(extra)
    Path(str(path) + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n")


# -- beta matrix ---------------------------------------------------------------


def write_beta_matrix(path, betas: BetaMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(_MGB_MAGIC)
        s, n = betas.values.shape
        fh.write(np.array([s, n], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(betas.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(betas.ages, dtype="<f8").tobytes())
        fh.write(("\n".join(betas.sample_ids) + "\n").encode("utf-8"))
        fh.write(("\n".join(betas.site_ids) + "\n").encode("utf-8"))


def read_beta_matrix(path) -> BetaMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != _MGB_MAGIC:
            raise IoError(f"{path}: not a beta-matrix file")
        dims = np.frombuffer(fh.read(8), dtype="<u4")
        s, n = int(dims[0]), int(dims[1])
        raw = fh.read(8 * s * n)
        if len(raw) != 8 * s * n:
            raise IoError(f"{path}: truncated beta block")
        values = np.frombuffer(raw, dtype="<f8")
        raw = fh.read(8 * s)
        if len(raw) != 8 * s:
            raise IoError(f"{path}: truncated age block")
        ages = np.frombuffer(raw, dtype="<f8")
        lines = fh.read().decode("utf-8").splitlines()
        if len(lines) != s + n:
            raise IoError(f"{path}: expected {s + n} id lines, found {len(lines)}")
    return BetaMatrix(values.reshape(s, n).copy(), ages.copy(),
                      lines[:s], lines[s:])


# -- generic matrix -------------------------------------------------------------


def write_matrix(path, values: np.ndarray, row_ids: list[str]) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(row_ids):
        raise IoError(f"matrix {values.shape} vs {len(row_ids)} row ids")
    with open(path, "wb") as fh:
        fh.write(_MGM_MAGIC)
        fh.write(np.array(values.shape, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
        fh.write(("\n".join(row_ids) + "\n").encode("utf-8"))


def read_matrix(path) -> tuple[np.ndarray, list[str]]:
    with open(path, "rb") as fh:
        if fh.read(4) != _MGM_MAGIC:
            raise IoError(f"{path}: not a matrix file")
        dims = np.frombuffer(fh.read(8), dtype="<u4")
        r, c = int(dims[0]), int(dims[1])
        raw = fh.read(8 * r * c)
        if len(raw) != 8 * r * c:
            raise IoError(f"{path}: truncated data block")
        values = np.frombuffer(raw, dtype="<f8")
        row_ids = fh.read().decode("utf-8").splitlines()
        if len(row_ids) != r:
            raise IoError(f"{path}: expected {r} row ids, found {len(row_ids)}")
    return values.reshape(r, c).copy(), row_ids


# -- text tables ----------------------------------------------------------------


def write_csv(path, header_cols: list[str], rows, cfg_hash: str, seed: int) -> None:
    """CSV with a provenance comment line; floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(cfg_hash, seed) + "\n")
        fh.write(",".join(header_cols) + "\n")
        for row in rows:
            cells = [fmt17(v) if isinstance(v, float) else str(v) for v in row]
            fh.write(",".join(cells) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    if header is None:
        raise IoError(f"{path}: no header line")
    return header, rows


# -- edge list -------------------------------------------------------------------


def write_edges(path, graph: GraphTopology, rules: EdgeRules,
                cfg_hash: str, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(cfg_hash, seed) + "\n")
        fh.write(f"#nodes={graph.num_nodes} rules={rules.r_global:g},"
                 f"{rules.r_chrom:g},{rules.r_local:g},{rules.local_dist:g}\n")
        for i, j, attrs in graph.iter_edges():
            fh.write(f"{i}\t{j}\t{fmt17(attrs[0])}\t{attrs[1]:g}\t{attrs[2]:g}\n")


def read_edges(path) -> GraphTopology:
    num_nodes = None
    ei, ej, attrs = [], [], []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#nodes="):
                num_nodes = int(line.split()[0].split("=")[1])
                continue
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise IoError(f"{path}: bad edge row {line!r}")
            ei.append(int(parts[0]))
            ej.append(int(parts[1]))
            attrs.append([float(parts[2]), float(parts[3]), float(parts[4])])
    if num_nodes is None:
        raise IoError(f"{path}: missing #nodes header")
    return GraphTopology(np.array(ei, dtype=np.int64), np.array(ej, dtype=np.int64),
                         np.array(attrs, dtype=np.float64).reshape(-1, 3), num_nodes)

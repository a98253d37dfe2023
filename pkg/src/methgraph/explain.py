"""Post-hoc interpretability: learned input masks and temporal analyses.

Two mask settings against a frozen model:

* shared attribute mask: one 8-vector in (0,1) multiplying the sequence
  feature columns (before both gate and projection) for every node;
* per-node mask: one scalar in (0,1) per site multiplying that site's
  modulated beta after gating.

Mask logits are optimised with Adam to keep the masked prediction close
to the unmasked one while size and entropy penalties push the mask
toward a sparse, decisive shape.  Importance matrices collected over an
evaluation cohort feed the temporal analyses: per-feature Pearson trends
with t-distribution p-values, LOWESS curves, and per-site linear-fit
slope rankings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .autodiff import Tape, Tensor, const, param
from .model import AgeModel, ModelParams
from .seqfeat import FEATURE_NAMES
from .trainer import AdamState, TrainingConfig, adam_step


class DegenerateAges(ValueError):
    """Temporal analysis needs at least two distinct ages."""


@dataclass(frozen=True)
class ExplainerConfig:
    steps: int = 100
    lr: float = 0.01
    lambda_size: float = 0.005
    lambda_entropy: float = 0.1


def _mask_objective(tape: Tape, model: AgeModel, beta: np.ndarray,
                    logits: Tensor, cfg: ExplainerConfig, base_pred: float,
                    kind: str) -> Tensor:
    mask = tape.sigmoid(logits)
    if kind == "attr":
        pred = model.forward(tape, beta, attr_mask=mask)
    else:
        pred = model.forward(tape, beta, node_mask=mask)
    keep = tape.mse(pred, const(np.asarray(base_pred)))
    size = tape.scalar_mul(tape.sum(mask), cfg.lambda_size)
    # binary entropy from logits: H = m*softplus(-l) + (1-m)*softplus(l)
    ones = const(np.ones_like(logits.data))
    ent = tape.add(
        tape.mul(mask, tape.softplus(tape.scalar_mul(logits, -1.0))),
        tape.mul(tape.sub(ones, mask), tape.softplus(logits)))
    entropy = tape.scalar_mul(tape.sum(ent), cfg.lambda_entropy)
    return tape.add(tape.add(keep, size), entropy)


def _learn_mask(model: AgeModel, beta: np.ndarray, cfg: ExplainerConfig,
                kind: str, size: int) -> np.ndarray:
    base_pred = model.predict(beta)
    logits = param(np.zeros(size))  # mask starts at 0.5
    holder = ModelParams([("logits", logits)])
    state = AdamState(holder)
    opt = TrainingConfig(lr=cfg.lr, weight_decay=0.0, epochs=1)
    for t in range(1, cfg.steps + 1):
        tape = Tape()
        loss = _mask_objective(tape, model, beta, logits, cfg, base_pred, kind)
        logits.grad = None
        tape.backward(loss)
        adam_step(holder, [logits.grad], state, opt, t)
    final = Tape(recording=False)
    return final.sigmoid(logits).data


def learn_attribute_mask(model: AgeModel, beta: np.ndarray,
                         cfg: ExplainerConfig = ExplainerConfig()) -> np.ndarray:
    """Shared 8-dim sequence-feature importance for one sample."""
    return _learn_mask(model, beta, cfg, "attr", 8)


def learn_node_mask(model: AgeModel, beta: np.ndarray,
                    cfg: ExplainerConfig = ExplainerConfig()) -> np.ndarray:
    """Per-site scalar importance for one sample."""
    return _learn_mask(model, beta, cfg, "node", model.config.n_sites)


@dataclass
class ImportanceMatrix:
    """Per-sample importance rows plus the matching ages."""

    values: np.ndarray  # (n_samples, 8) or (n_samples, n_sites)
    ages: np.ndarray
    sample_ids: list[str]

    def mean_importance(self) -> np.ndarray:
        return self.values.mean(axis=0)


def attribute_importance_matrix(model: AgeModel, betas: np.ndarray,
                                ages: np.ndarray, sample_ids: list[str],
                                cfg: ExplainerConfig = ExplainerConfig()) -> ImportanceMatrix:
    rows = [learn_attribute_mask(model, b, cfg) for b in betas]
    return ImportanceMatrix(np.array(rows), np.asarray(ages, float), list(sample_ids))


def node_importance_matrix(model: AgeModel, betas: np.ndarray,
                           ages: np.ndarray, sample_ids: list[str],
                           cfg: ExplainerConfig = ExplainerConfig()) -> ImportanceMatrix:
    rows = [learn_node_mask(model, b, cfg) for b in betas]
    return ImportanceMatrix(np.array(rows), np.asarray(ages, float), list(sample_ids))


# -- statistics ---------------------------------------------------------------


def pearson_with_p(x, y) -> tuple[float, float]:
    """Pearson r with the two-sided t-distribution p-value."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n = x.size
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        return 0.0, 1.0
    r = float(np.clip(np.sum(xc * yc) / denom, -1.0, 1.0))
    if n < 3:
        return r, 1.0
    if 1.0 - r * r < 1e-15:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * stdtr(n - 2, -abs(t))
    return r, float(p)


def lowess(x, y, grid, *, span: float = 0.5, kernel: str = "tricube") -> np.ndarray:
    """Locally linear fit evaluated on `grid`.

    Bandwidth at each grid point is the distance to the ceil(span*n)-th
    nearest sample; weights are tricube (or uniform), no robustness
    iterations.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    grid = np.asarray(grid, float)
    n = x.size
    r = min(max(int(np.ceil(span * n)), 2), n)
    fitted = np.empty(grid.size)
    for k, x0 in enumerate(grid):
        d = np.abs(x - x0)
        h = np.partition(d, r - 1)[r - 1]
        h = max(h, 1e-12)
        if kernel == "tricube":
            u = np.clip(d / h, 0.0, 1.0)
            w = (1.0 - u**3) ** 3
        elif kernel == "uniform":
            w = (d <= h).astype(float)
        else:
            raise ValueError(f"unknown kernel {kernel!r}")
        sw = w.sum()
        xw = np.sum(w * x) / sw
        yw = np.sum(w * y) / sw
        sxx = np.sum(w * (x - xw) ** 2)
        if sxx <= 1e-12 * max(1.0, xw * xw):
            fitted[k] = yw
        else:
            slope = np.sum(w * (x - xw) * (y - yw)) / sxx
            fitted[k] = yw + slope * (x0 - xw)
    return fitted


@dataclass
class FeatureTrend:
    feature: str
    r: float
    p: float
    slope: float
    lowess_grid: np.ndarray | None = None
    lowess_fit: np.ndarray | None = None


def temporal_feature_trends(imp: ImportanceMatrix, *, p_threshold: float = 0.01,
                            span: float = 0.5, grid_size: int = 100) -> list[FeatureTrend]:
    """Per-feature importance-vs-age trends.

    LOWESS curves are reported only for features whose Pearson p-value
    passes the threshold; the rest are returned without a smoothed curve.
    """
    ages = imp.ages
    if imp.values.shape[0] < 10:
        raise DegenerateAges("need at least 10 samples for trend analysis")
    if np.ptp(ages) == 0.0:
        raise DegenerateAges("all ages identical")
    grid = np.linspace(ages.min(), ages.max(), grid_size)
    trends = []
    for j in range(imp.values.shape[1]):
        col = imp.values[:, j]
        r, p = pearson_with_p(col, ages)
        ac = ages - ages.mean()
        slope = float(np.sum(ac * (col - col.mean())) / np.sum(ac * ac))
        name = FEATURE_NAMES[j] if imp.values.shape[1] == len(FEATURE_NAMES) else f"col{j}"
        trend = FeatureTrend(feature=name, r=r, p=p, slope=slope)
        if p <= p_threshold:
            trend.lowess_grid = grid
            trend.lowess_fit = lowess(ages, col, grid, span=span)
        trends.append(trend)
    return trends


@dataclass
class SlopeRanking:
    slopes: np.ndarray  # per-site
    increasing: np.ndarray  # site indices, steepest positive first
    decreasing: np.ndarray  # site indices, steepest negative first


def site_slope_ranking(imp: ImportanceMatrix, k: int = 10) -> SlopeRanking:
    """Least-squares slope of importance vs age per site, ranked."""
    ages = imp.ages
    ac = ages - ages.mean()
    denom = np.sum(ac * ac)
    if denom == 0.0:
        raise DegenerateAges("all ages identical")
    centred = imp.values - imp.values.mean(axis=0)
    slopes = ac @ centred / denom
    order = np.argsort(-slopes, kind="stable")
    return SlopeRanking(slopes=slopes,
                        increasing=order[:k],
                        decreasing=order[::-1][:k])

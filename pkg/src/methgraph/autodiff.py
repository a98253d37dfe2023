"""Reverse-mode differentiation on a per-step tape.

The engine is deliberately small: a ``Tensor`` wraps a float64 ndarray,
and a ``Tape`` records every operation of one forward pass together with
a backward closure.  Calling ``Tape.backward`` on a scalar loss walks the
record list in reverse (a valid reverse topological order for
define-by-run execution) and accumulates gradients into every tensor
that was created with ``requires_grad=True``.

All arithmetic is 64-bit; there is no broadcasting beyond the few
documented cases (bias rows, row/column vectors).  Shapes are validated
eagerly so a mismatch fails at the op that caused it.
"""

from __future__ import annotations

import numpy as np

# Standard constants of the self-normalising activation.
SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805

# Epsilon inside the backward denominator of the std reduction; keeps the
# gradient finite at zero variance while the forward value stays exact.
STD_EPS = 1e-10


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NotScalar(ValueError):
    """backward() was called on a non-scalar tensor."""


class BadProbability(ValueError):
    """Dropout probability outside [0, 1)."""


class Tensor:
    """A float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def param(data) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True)


def const(data) -> Tensor:
    """Leaf tensor treated as a constant."""
    return Tensor(data, requires_grad=False)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeMismatch(msg)


class ScatterPlan:
    """Precomputed sort plan for the scatter-add in ``take_rows`` backward."""

    def __init__(self, idx: np.ndarray, nrows: int):
        idx = np.asarray(idx, dtype=np.int64)
        self.nrows = nrows
        self.order = np.argsort(idx, kind="stable")
        sorted_idx = idx[self.order]
        self.targets, self.starts = np.unique(sorted_idx, return_index=True)


class SegmentMap:
    """Reduction plan mapping rows of an edge-message matrix onto nodes.

    ``seg_ids`` must be sorted ascending; rows sharing an id form one
    contiguous segment.  Built once per graph and reused by every
    forward pass.
    """

    def __init__(self, seg_ids: np.ndarray, num_segments: int):
        seg_ids = np.asarray(seg_ids, dtype=np.int64)
        if seg_ids.size and np.any(np.diff(seg_ids) < 0):
            raise ValueError("segment ids must be sorted ascending")
        if seg_ids.size and (seg_ids.min() < 0 or seg_ids.max() >= num_segments):
            raise ValueError("segment id out of range")
        self.seg_ids = seg_ids
        self.num_segments = num_segments
        self.nonempty, self.starts = np.unique(seg_ids, return_index=True)
        counts_ne = np.diff(np.append(self.starts, seg_ids.size))
        self.counts = np.zeros(num_segments, dtype=np.int64)
        self.counts[self.nonempty] = counts_ne
        # per-row count of the owning segment, as float for divisions
        self.row_counts = self.counts[seg_ids].astype(np.float64)
        # position of each row's segment within `nonempty`
        self.row_seg_pos = np.searchsorted(self.nonempty, seg_ids)
        self.row_index_col = np.arange(seg_ids.size)[:, None]


class Tape:
    """Operation recorder for one forward/backward pass.

    With ``recording=False`` the same ops run forward-only (used for
    evaluation passes), so the numerical path is identical in both modes.
    """

    def __init__(self, recording: bool = True, collect_rank1: bool = False):
        self.recording = recording
        # Opt-in optimiser fast path: single-row linear layers may report
        # their weight gradient as (tensor, g_row, x_row) factors instead of
        # materialising the outer product.  Every factor pair expands to the
        # exact same per-element product, so consumers that expand (or fuse,
        # as the Adam kernel does) are bit-identical with the default path.
        self.collect_rank1 = collect_rank1
        self.rank1_grads: list = []  # (tensor, g_row, x_row)
        self._records: list = []  # (out, inputs, backward_closure)
        self._produced: set[int] = set()

    # -- plumbing ---------------------------------------------------------

    def _emit(self, out: Tensor, inputs, backward) -> Tensor:
        if self.recording:
            self._records.append((out, inputs, backward))
            self._produced.add(id(out))
        return out

    def _needs(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced

    # -- elementwise ------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        _require(a.shape == b.shape, f"add: {a.shape} vs {b.shape}")
        out = Tensor(a.data + b.data)

        def backward(g):
            return g, g

        return self._emit(out, (a, b), backward)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        _require(a.shape == b.shape, f"sub: {a.shape} vs {b.shape}")
        out = Tensor(a.data - b.data)

        def backward(g):
            return g, -g

        return self._emit(out, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        _require(a.shape == b.shape, f"mul: {a.shape} vs {b.shape}")
        ad, bd = a.data, b.data
        out = Tensor(ad * bd)

        def backward(g):
            return g * bd, g * ad

        return self._emit(out, (a, b), backward)

    def scalar_mul(self, a: Tensor, c: float) -> Tensor:
        c = float(c)
        out = Tensor(a.data * c)

        def backward(g):
            return (g * c,)

        return self._emit(out, (a,), backward)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0.0
        out = Tensor(np.where(mask, a.data, 0.0))

        def backward(g):
            return (g * mask,)

        return self._emit(out, (a,), backward)

    def selu(self, a: Tensor) -> Tensor:
        pos = a.data > 0.0
        expx = np.exp(np.minimum(a.data, 0.0))
        out = Tensor(SELU_SCALE * np.where(pos, a.data, SELU_ALPHA * (expx - 1.0)))

        def backward(g):
            return (g * SELU_SCALE * np.where(pos, 1.0, SELU_ALPHA * expx),)

        return self._emit(out, (a,), backward)

    def sigmoid(self, a: Tensor) -> Tensor:
        # numerically stable two-branch form
        x = a.data
        s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor(s)

        def backward(g):
            return (g * s * (1.0 - s),)

        return self._emit(out, (a,), backward)

    def log(self, a: Tensor) -> Tensor:
        ad = a.data
        out = Tensor(np.log(ad))

        def backward(g):
            return (g / ad,)

        return self._emit(out, (a,), backward)

    def softplus(self, a: Tensor) -> Tensor:
        x = a.data
        out = Tensor(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x))))
        sig = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                       np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(g):
            return (g * sig,)

        return self._emit(out, (a,), backward)

    # -- linear algebra ---------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _require(a.ndim == 2 and b.ndim == 2, f"matmul needs 2-D operands: {a.shape} vs {b.shape}")
        _require(a.shape[1] == b.shape[0], f"matmul: {a.shape} vs {b.shape}")
        ad, bd = a.data, b.data
        out = Tensor(ad @ bd)
        need_a, need_b = self._needs(a), self._needs(b)

        def backward(g):
            ga = g @ bd.T if need_a else None
            if need_b:
                # rank-1 case: a is a single row, plain outer is faster than gemm
                gb = ad[0][:, None] * g[0][None, :] if ad.shape[0] == 1 else ad.T @ g
            else:
                gb = None
            return ga, gb

        return self._emit(out, (a, b), backward)

    def linear(self, x: Tensor, w: Tensor, b: Tensor, relu: bool = False) -> Tensor:
        """x @ w.T + b with x: (R, I), w: (O, I), b: (O,).

        With ``relu=True`` the activation is fused in place; gradients are
        identical to a separate relu op (both clamp at pre-activation 0).
        """
        _require(x.ndim == 2 and w.ndim == 2 and b.ndim == 1,
                 f"linear: x{x.shape} w{w.shape} b{b.shape}")
        _require(x.shape[1] == w.shape[1] and w.shape[0] == b.shape[0],
                 f"linear: x{x.shape} w{w.shape} b{b.shape}")
        xd, wd = x.data, w.data
        out_d = xd @ wd.T + b.data
        if relu:
            np.maximum(out_d, 0.0, out=out_d)
        out = Tensor(out_d)
        need_x, need_w, need_b = self._needs(x), self._needs(w), self._needs(b)
        # leaf weights of single-row layers may defer the outer product;
        # capture the sink list (not the tape) so records stay cycle-free
        factored = (self.collect_rank1 and xd.shape[0] == 1
                    and w.requires_grad and id(w) not in self._produced)
        rank1_sink = self.rank1_grads if factored else None

        def backward(g):
            if relu:
                g = g * (out_d > 0.0)
            gx = g @ wd if need_x else None
            if need_w:
                if factored:
                    rank1_sink.append((w, g[0], xd[0]))
                    gw = None
                elif xd.shape[0] == 1:
                    gw = g[0][:, None] * xd[0][None, :]
                else:
                    gw = g.T @ xd
            else:
                gw = None
            gb = (g[0].copy() if g.shape[0] == 1 else g.sum(axis=0)) if need_b else None
            return gx, gw, gb

        return self._emit(out, (x, w, b), backward)

    def add_bias(self, x: Tensor, b: Tensor) -> Tensor:
        """Add a length-C row vector to every row of an (R, C) matrix."""
        _require(x.ndim == 2 and b.ndim == 1 and x.shape[1] == b.shape[0],
                 f"add_bias: {x.shape} vs {b.shape}")
        out = Tensor(x.data + b.data)

        def backward(g):
            return g, g.sum(axis=0)

        return self._emit(out, (x, b), backward)

    def mul_rowvec(self, x: Tensor, v: Tensor) -> Tensor:
        """Scale column j of an (R, C) matrix by v[j]; v is differentiable."""
        _require(x.ndim == 2 and v.ndim == 1 and x.shape[1] == v.shape[0],
                 f"mul_rowvec: {x.shape} vs {v.shape}")
        xd, vd = x.data, v.data
        out = Tensor(xd * vd)
        need_x, need_v = self._needs(x), self._needs(v)

        def backward(g):
            gx = g * vd if need_x else None
            gv = (g * xd).sum(axis=0) if need_v else None
            return gx, gv

        return self._emit(out, (x, v), backward)

    def rowscale(self, x: Tensor, s: np.ndarray) -> Tensor:
        """Scale row i of an (R, C) matrix by the constant s[i]."""
        _require(x.ndim == 2 and s.ndim == 1 and x.shape[0] == s.shape[0],
                 f"rowscale: {x.shape} vs {s.shape}")
        col = s[:, None]
        out = Tensor(x.data * col)

        def backward(g):
            return (g * col,)

        return self._emit(out, (x,), backward)

    # -- structure --------------------------------------------------------

    def concat(self, parts, axis: int) -> Tensor:
        _require(axis in (0, 1), "concat: axis must be 0 or 1")
        parts = tuple(parts)
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def backward(g):
            if axis == 0:
                return tuple(g[offsets[k]:offsets[k + 1]] for k in range(len(parts)))
            return tuple(g[:, offsets[k]:offsets[k + 1]] for k in range(len(parts)))

        return self._emit(out, parts, backward)

    def narrow(self, x: Tensor, axis: int, start: int, stop: int) -> Tensor:
        _require(axis in (0, 1) and x.ndim == 2, "narrow: 2-D tensor, axis 0 or 1")
        _require(0 <= start < stop <= x.shape[axis], f"narrow: [{start}:{stop}) out of {x.shape}")
        sl = (slice(start, stop), slice(None)) if axis == 0 else (slice(None), slice(start, stop))
        out = Tensor(x.data[sl])

        def backward(g):
            gx = np.zeros_like(x.data)
            gx[sl] = g
            return (gx,)

        return self._emit(out, (x,), backward)

    def reshape(self, x: Tensor, shape) -> Tensor:
        out = Tensor(x.data.reshape(shape))
        orig = x.data.shape

        def backward(g):
            return (g.reshape(orig),)

        return self._emit(out, (x,), backward)

    def take_rows(self, x: Tensor, idx: np.ndarray, plan: ScatterPlan | None = None) -> Tensor:
        """Gather rows of a 2-D tensor; backward scatter-adds.

        A precomputed ScatterPlan (for index arrays reused across passes)
        replaces the per-column bincounts with one sorted reduction.
        """
        _require(x.ndim == 2, f"take_rows: need 2-D tensor, got {x.shape}")
        idx = np.asarray(idx, dtype=np.int64)
        out = Tensor(x.data[idx])
        nrows, ncols = x.shape

        def backward(g):
            gx = np.zeros((nrows, ncols))
            if plan is not None:
                if plan.starts.size:
                    gx[plan.targets] = np.add.reduceat(g[plan.order], plan.starts, axis=0)
            else:
                for c in range(ncols):
                    gx[:, c] = np.bincount(idx, weights=g[:, c], minlength=nrows)
            return (gx,)

        return self._emit(out, (x,), backward)

    # -- segment reductions (edge messages -> nodes) -----------------------

    def segment_mean(self, values: Tensor, seg: SegmentMap) -> Tensor:
        _require(values.ndim == 2 and values.shape[0] == seg.seg_ids.size,
                 f"segment_mean: {values.shape} vs {seg.seg_ids.size} rows")
        vd = values.data
        out_d = np.zeros((seg.num_segments, vd.shape[1]))
        if seg.nonempty.size:
            sums = np.add.reduceat(vd, seg.starts, axis=0)
            out_d[seg.nonempty] = sums / seg.counts[seg.nonempty][:, None]
        out = Tensor(out_d)

        def backward(g):
            return (g[seg.seg_ids] / seg.row_counts[:, None],)

        return self._emit(out, (values,), backward)

    def _segment_extremum(self, values: Tensor, seg: SegmentMap, kind: str) -> Tensor:
        _require(values.ndim == 2 and values.shape[0] == seg.seg_ids.size,
                 f"segment_{kind}: {values.shape} vs {seg.seg_ids.size} rows")
        vd = values.data
        ufunc = np.maximum if kind == "max" else np.minimum
        out_d = np.zeros((seg.num_segments, vd.shape[1]))
        if seg.nonempty.size:
            out_d[seg.nonempty] = ufunc.reduceat(vd, seg.starts, axis=0)
        out = Tensor(out_d)

        def backward(g):
            gv = np.zeros_like(vd)
            if seg.nonempty.size:
                nrows = vd.shape[0]
                hit = vd == out_d[seg.seg_ids]
                pos = np.where(hit, np.arange(nrows)[:, None], nrows)
                # ties route to the first row of the segment (lowest source index)
                first = np.minimum.reduceat(pos, seg.starts, axis=0)
                cols = np.broadcast_to(np.arange(vd.shape[1]), first.shape)
                gv[first, cols] = g[seg.nonempty]
            return (gv,)

        return self._emit(out, (values,), backward)

    def segment_max(self, values: Tensor, seg: SegmentMap) -> Tensor:
        return self._segment_extremum(values, seg, "max")

    def segment_min(self, values: Tensor, seg: SegmentMap) -> Tensor:
        return self._segment_extremum(values, seg, "min")

    def segment_std(self, values: Tensor, seg: SegmentMap) -> Tensor:
        """Population standard deviation per segment.

        Forward value is the exact sqrt of the population variance (0 for
        single-row segments); the backward denominator carries STD_EPS so
        the gradient is finite (and zero) at zero variance.
        """
        _require(values.ndim == 2 and values.shape[0] == seg.seg_ids.size,
                 f"segment_std: {values.shape} vs {seg.seg_ids.size} rows")
        vd = values.data
        ncols = vd.shape[1]
        mean = np.zeros((seg.num_segments, ncols))
        var = np.zeros((seg.num_segments, ncols))
        if seg.nonempty.size:
            cnt = seg.counts[seg.nonempty][:, None]
            sums = np.add.reduceat(vd, seg.starts, axis=0)
            mean[seg.nonempty] = sums / cnt
        dev = vd - mean[seg.seg_ids]
        if seg.nonempty.size:
            cnt = seg.counts[seg.nonempty][:, None]
            var[seg.nonempty] = np.add.reduceat(dev * dev, seg.starts, axis=0) / cnt
        out = Tensor(np.sqrt(var))

        def backward(g):
            denom = np.sqrt(var + STD_EPS)[seg.seg_ids] * seg.row_counts[:, None]
            return (g[seg.seg_ids] * dev / denom,)

        return self._emit(out, (values,), backward)

    def pna_aggregate(self, values: Tensor, seg: SegmentMap, scalers: np.ndarray) -> Tensor:
        """Fused mean/max/min/std segment reduction with degree scaling.

        Equivalent to reducing `values` with the four segment ops, scaling
        each result by the three constant scaler columns and concatenating
        the 12 blocks in (aggregator-major, scaler-minor) order; fused into
        one record to keep the per-step op count low.  Ties in max/min
        route gradient to the first row of the segment, matching the
        standalone ops.
        """
        _require(values.ndim == 2 and values.shape[0] == seg.seg_ids.size,
                 f"pna_aggregate: {values.shape} vs {seg.seg_ids.size} rows")
        _require(scalers.shape == (seg.num_segments, 3),
                 f"pna_aggregate: scalers {scalers.shape}")
        vd = values.data
        n, h = seg.num_segments, vd.shape[1]
        ne, starts = seg.nonempty, seg.starts
        out_d = np.zeros((n, 12 * h))
        dev = vd
        var = np.zeros((len(ne), h))
        max_ne = min_ne = None
        if ne.size:
            cnt = seg.counts[ne][:, None].astype(np.float64)
            mean_ne = np.add.reduceat(vd, starts, axis=0) / cnt
            max_ne = np.maximum.reduceat(vd, starts, axis=0)
            min_ne = np.minimum.reduceat(vd, starts, axis=0)
            dev = vd - mean_ne[seg.row_seg_pos]
            var = np.add.reduceat(dev * dev, starts, axis=0) / cnt
            # (K, 4, H) aggregates x (K, 3) scalers -> (K, 4, 3, H) blocks
            aggs = np.stack([mean_ne, max_ne, min_ne, np.sqrt(var)], axis=1)
            scaled = aggs[:, :, None, :] * scalers[ne][:, None, :, None]
            out_d[ne] = scaled.reshape(len(ne), 12 * h)
        out = Tensor(out_d)

        def backward(g):
            gv = np.zeros_like(vd)
            if not ne.size:
                return (gv,)
            # collapse the three scaled copies of each aggregator block
            coeff = np.einsum("nash,ns->nah", g.reshape(n, 4, 3, h), scalers)
            rows = seg.seg_ids
            rowpos = seg.row_seg_pos
            cnt_rows = seg.row_counts[:, None]
            gv += coeff[rows, 0] / cnt_rows
            nrows = vd.shape[0]
            pos = seg.row_index_col
            cols = np.broadcast_to(np.arange(h), (len(ne), h))
            for a, extremum in ((1, max_ne), (2, min_ne)):
                hit = vd == extremum[rowpos]
                first = np.minimum.reduceat(np.where(hit, pos, nrows), starts, axis=0)
                # (first, col) pairs are unique: one winner per segment-column
                gv[first, cols] += coeff[ne, a]
            denom = np.sqrt(var + STD_EPS)[rowpos] * cnt_rows
            gv += coeff[rows, 3] * dev / denom
            return (gv,)

        return self._emit(out, (values,), backward)

    # -- reductions & loss --------------------------------------------------

    def sum(self, x: Tensor) -> Tensor:
        out = Tensor(x.data.sum())
        shape = x.data.shape

        def backward(g):
            return (np.broadcast_to(g, shape).copy() if shape else g,)

        return self._emit(out, (x,), backward)

    def mean(self, x: Tensor) -> Tensor:
        n = x.data.size
        out = Tensor(x.data.sum() / n)
        shape = x.data.shape

        def backward(g):
            return (np.broadcast_to(g / n, shape).copy(),)

        return self._emit(out, (x,), backward)

    def mse(self, pred: Tensor, target: Tensor) -> Tensor:
        _require(pred.shape == target.shape, f"mse: {pred.shape} vs {target.shape}")
        diff = pred.data - target.data
        n = max(diff.size, 1)
        out = Tensor(np.sum(diff * diff) / n)
        need_p, need_t = self._needs(pred), self._needs(target)

        def backward(g):
            base = (2.0 / n) * diff * g
            return (base if need_p else None), (-base if need_t else None)

        return self._emit(out, (pred, target), backward)

    # -- regularisation -----------------------------------------------------

    def dropout(self, x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
        if not 0.0 <= p < 1.0:
            raise BadProbability(f"dropout probability {p} outside [0, 1)")
        if not training or p == 0.0:
            return x
        keep = (rng.random(x.shape) >= p) / (1.0 - p)
        out = Tensor(x.data * keep)

        def backward(g):
            return (g * keep,)

        return self._emit(out, (x,), backward)

    # -- reverse pass -------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad tensor reachable from loss."""
        if loss.data.shape not in ((), (1,), (1, 1)):
            raise NotScalar(f"backward needs a scalar loss, got shape {loss.data.shape}")
        acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.requires_grad:
            leaves[id(loss)] = loss
        for out, inputs, bwd in reversed(self._records):
            g = acc.pop(id(out), None)
            if g is None:
                continue
            grads = bwd(g)
            for inp, gi in zip(inputs, grads):
                if gi is None:
                    continue
                if not self._needs(inp):
                    continue
                k = id(inp)
                if k in acc:
                    acc[k] = acc[k] + gi
                else:
                    acc[k] = gi
                if inp.requires_grad:
                    leaves[k] = inp
        for k, t in leaves.items():
            g = acc.get(k)
            if g is None:
                continue
            # accumulation never mutates stored arrays, so adopting g
            # (possibly a view shared with another leaf) is safe
            t.grad = g if t.grad is None else t.grad + g

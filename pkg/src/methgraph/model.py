"""The gated sequence-graph regression model.

Per node i the forward pass computes

    g_i   = sigmoid(W2 . relu(W1 s_i + b1) + b2)        importance gate
    m~_i  = m_i * g_i                                    modulated beta
    p_i   = W4 . relu(W3 s_i + b3) + b4                  2-dim projection
    x_i   = [m~_i | f_i | p_i]                           12-dim fusion

then one PNA convolution over the co-methylation graph: each directed
edge (j -> i) carries the message relu(W_msg [x_i | x_j | e_ij] + b_msg);
messages are reduced per receiving node with mean/max/min/std, each
scaled by the identity, amplification and attenuation degree scalers
(log(d+1)/delta to the powers 0, +1, -1), concatenated and mapped to a
scalar h_i, followed by ReLU.  The length-N vector h feeds an MLP that
outputs the predicted age.

The sequence-agnostic control (``sequence_mode="agnostic"``) pins
g = 1 and p = 0, which reproduces the plain graph baseline exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import ScatterPlan, SegmentMap, Tape, Tensor, const, param
from .comethgraph import GraphTopology

FUSED_DIM = 12  # 1 (beta) + 9 (positional) + 2 (projection)
SEQ_DIM = 8
POS_DIM = 9
EDGE_DIM = 3


class GraphMismatch(ValueError):
    """Node count of the graph differs from the feature matrices."""


class WidthMismatch(ValueError):
    """MLP input width differs from the trained width."""


class DimMismatch(ValueError):
    """Fusion component has the wrong width."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults follow the reference setup."""

    n_sites: int
    msg_width: int = 16
    mlp_dims: tuple = (1024, 656, 256, 124, 64, 32, 8, 1)
    relu_layers: tuple = (0, 1, 2, 3)   # ReLU after these MLP layers
    selu_layers: tuple = (4, 5, 6)      # SELU after these; the last is linear
    dropout_layers: tuple = (0, 1, 2)   # dropout follows these activations
    dropout_p: float = 0.2
    sequence_mode: str = "gated"        # "gated" | "agnostic"

    def __post_init__(self):
        if self.sequence_mode not in ("gated", "agnostic"):
            raise ValueError(f"unknown sequence_mode {self.sequence_mode!r}")
        if self.mlp_dims[-1] != 1:
            raise ValueError("final MLP layer must be scalar")


@dataclass
class DegreeStats:
    """Mean log-degree of the training graph, frozen at construction."""

    delta: float


class ModelParams:
    """Ordered, named collection of all learnable tensors."""

    def __init__(self, entries: list[tuple[str, Tensor]]):
        self._entries = entries
        self._by_name = dict(entries)
        if len(self._by_name) != len(entries):
            raise ValueError("duplicate parameter name")

    def __getitem__(self, name: str) -> Tensor:
        return self._by_name[name]

    def names(self) -> list[str]:
        return [n for n, _ in self._entries]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self._entries]

    def items(self):
        return list(self._entries)

    def zero_grad(self) -> None:
        for _, t in self._entries:
            t.grad = None

    def copy(self) -> "ModelParams":
        return ModelParams([(n, param(t.data.copy())) for n, t in self._entries])

    def load_values(self, other: "ModelParams") -> None:
        for (n, t), (n2, t2) in zip(self._entries, other._entries):
            if n != n2 or t.data.shape != t2.data.shape:
                raise WidthMismatch(f"parameter mismatch {n}{t.data.shape} vs {n2}{t2.data.shape}")
            t.data = t2.data.copy()

    def total_size(self) -> int:
        return sum(t.data.size for _, t in self._entries)


def _kaiming_uniform(rng, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / in_dim)
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


RELU_BIAS_INIT = 0.05


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fan-in uniform weights; ReLU-facing layers get a small positive bias.

    A strictly zero-bias init can leave the scalar PNA output dead on
    every node for unlucky draws, severing all gradient flow; the small
    positive offset keeps the ReLU chain trainable.  The gate output bias
    stays at zero so the initial gate sits near 0.5.
    """
    entries: list[tuple[str, Tensor]] = []

    def lin(name, out_dim, in_dim, bias=0.0):
        entries.append((f"{name}.w", param(_kaiming_uniform(rng, out_dim, in_dim))))
        entries.append((f"{name}.b", param(np.full(out_dim, bias))))

    relu_bias = RELU_BIAS_INIT
    lin("gate.l1", 16, SEQ_DIM, relu_bias)
    lin("gate.l2", 1, 16)  # zero: initial gate ~ 0.5
    lin("proj.l1", SEQ_DIM, SEQ_DIM, relu_bias)
    lin("proj.l2", 2, SEQ_DIM)
    lin("pna.msg", config.msg_width, 2 * FUSED_DIM + EDGE_DIM, relu_bias)
    lin("pna.post", 1, 12 * config.msg_width, relu_bias)
    in_dim = config.n_sites
    last = len(config.mlp_dims) - 1
    for k, out_dim in enumerate(config.mlp_dims):
        lin(f"mlp.{k}", out_dim, in_dim,
            relu_bias if (k in config.relu_layers and k != last) else 0.0)
        in_dim = out_dim
    return ModelParams(entries)


class GraphData:
    """Static per-graph arrays shared by every forward pass.

    The undirected edge list is expanded to both directions and sorted by
    (destination, source) so messages form contiguous segments per
    receiving node and ties in max/min reductions resolve to the lowest
    source index.
    """

    def __init__(self, topology: GraphTopology, num_nodes: int | None = None):
        n = topology.num_nodes if num_nodes is None else num_nodes
        src = np.concatenate([topology.edges_j, topology.edges_i])
        dst = np.concatenate([topology.edges_i, topology.edges_j])
        eattr = np.concatenate([topology.attrs, topology.attrs], axis=0)
        order = np.lexsort((src, dst))
        self.src = src[order]
        self.dst = dst[order]
        self.edge_attr = eattr[order]
        self.num_nodes = n
        self.seg = SegmentMap(self.dst, n)
        self.dst_plan = ScatterPlan(self.dst, n)
        self.src_plan = ScatterPlan(self.src, n)
        self.degrees = np.bincount(self.dst, minlength=n).astype(np.float64)
        logdeg = np.log(self.degrees + 1.0)
        self.stats = DegreeStats(delta=float(logdeg.mean()))
        self.scalers = self._degree_scalers(logdeg, self.stats.delta)

    @staticmethod
    def _degree_scalers(logdeg: np.ndarray, delta: float) -> np.ndarray:
        """(N, 3) columns: identity, amplification, attenuation.

        Isolated nodes get zero amplification/attenuation so their (empty,
        all-zero) aggregates stay zero instead of propagating inf.
        """
        n = logdeg.shape[0]
        scalers = np.ones((n, 3))
        if delta > 0.0:
            amp = logdeg / delta
            scalers[:, 1] = amp
            scalers[:, 2] = np.where(logdeg > 0.0, delta / np.where(logdeg > 0.0, logdeg, 1.0), 0.0)
        else:  # edgeless graph: every aggregate is zero anyway
            scalers[:, 1] = 0.0
            scalers[:, 2] = 0.0
        return scalers

    @property
    def num_directed_edges(self) -> int:
        return self.src.size


class AgeModel:
    """Bundles parameters, static node features and the training graph."""

    def __init__(self, config: ModelConfig, params: ModelParams,
                 graph: GraphData, seq_features: np.ndarray,
                 positional: np.ndarray):
        seq_features = np.asarray(seq_features, dtype=np.float64)
        positional = np.asarray(positional, dtype=np.float64)
        n = config.n_sites
        if seq_features.shape != (n, SEQ_DIM):
            raise DimMismatch(f"sequence features {seq_features.shape}, want ({n}, {SEQ_DIM})")
        if positional.shape != (n, POS_DIM):
            raise DimMismatch(f"positional features {positional.shape}, want ({n}, {POS_DIM})")
        if graph.num_nodes != n:
            raise GraphMismatch(f"graph has {graph.num_nodes} nodes, features have {n}")
        self.config = config
        self.params = params
        self.graph = graph
        self.seq_features = const(seq_features)
        self.positional = const(positional)
        self._edge_attr = const(graph.edge_attr)

    # -- forward -----------------------------------------------------------

    def forward(self, tape: Tape, beta: np.ndarray, *, training: bool = False,
                rng: np.random.Generator | None = None,
                attr_mask: Tensor | None = None,
                node_mask: Tensor | None = None) -> Tensor:
        """Predicted age for one sample's beta vector; returns a scalar tensor."""
        cfg = self.config
        n = cfg.n_sites
        beta = np.asarray(beta, dtype=np.float64)
        if beta.shape != (n,):
            raise GraphMismatch(f"beta vector {beta.shape}, model expects ({n},)")
        p = self.params

        seq = self.seq_features
        if attr_mask is not None:
            seq = tape.mul_rowvec(seq, attr_mask)

        m = const(beta[:, None])  # (N, 1)
        if cfg.sequence_mode == "gated":
            gate_h = tape.linear(seq, p["gate.l1.w"], p["gate.l1.b"], relu=True)
            gate = tape.sigmoid(tape.linear(gate_h, p["gate.l2.w"], p["gate.l2.b"]))
            modulated = tape.mul(m, gate)
            proj_h = tape.linear(seq, p["proj.l1.w"], p["proj.l1.b"], relu=True)
            proj = tape.linear(proj_h, p["proj.l2.w"], p["proj.l2.b"])
        else:
            modulated = m
            proj = const(np.zeros((n, 2)))

        if node_mask is not None:
            modulated = tape.mul(modulated, tape.reshape(node_mask, (n, 1)))

        fused = tape.concat([modulated, self.positional, proj], axis=1)  # (N, 12)
        h = self._pna(tape, fused)  # (N, 1)

        vec = tape.reshape(h, (1, n))
        last = len(cfg.mlp_dims) - 1
        for k in range(len(cfg.mlp_dims)):
            use_relu = k in cfg.relu_layers and k != last  # output layer stays linear
            vec = tape.linear(vec, p[f"mlp.{k}.w"], p[f"mlp.{k}.b"], relu=use_relu)
            if not use_relu and k != last and k in cfg.selu_layers:
                vec = tape.selu(vec)
            if training and k in cfg.dropout_layers:
                vec = tape.dropout(vec, cfg.dropout_p, training, rng)
        return tape.reshape(vec, ())

    def _pna(self, tape: Tape, fused: Tensor) -> Tensor:
        p = self.params
        g = self.graph
        if g.num_directed_edges == 0:
            # every node is isolated: post map of the zero vector
            zero = const(np.zeros((g.num_nodes, 12 * self.config.msg_width)))
            return tape.linear(zero, p["pna.post.w"], p["pna.post.b"], relu=True)
        x_dst = tape.take_rows(fused, g.dst, plan=g.dst_plan)
        x_src = tape.take_rows(fused, g.src, plan=g.src_plan)
        msg_in = tape.concat([x_dst, x_src, self._edge_attr], axis=1)  # (E, 27)
        msgs = tape.linear(msg_in, p["pna.msg.w"], p["pna.msg.b"], relu=True)
        stacked = tape.pna_aggregate(msgs, g.seg, g.scalers)  # (N, 12 * msg_width)
        return tape.linear(stacked, p["pna.post.w"], p["pna.post.b"], relu=True)

    # -- convenience ---------------------------------------------------------

    def predict(self, beta: np.ndarray) -> float:
        """Deterministic eval-mode prediction."""
        return float(self.forward(Tape(recording=False), beta).data)

    def predict_many(self, betas: np.ndarray) -> np.ndarray:
        return np.array([self.predict(b) for b in np.asarray(betas)])


# -- building blocks exposed for direct use and tests ------------------------

def gate_value(tape: Tape, seq_row: Tensor, params: ModelParams) -> Tensor:
    """Scalar modulation weight g in (0, 1) for one (1, 8) feature row."""
    h = tape.relu(tape.linear(seq_row, params["gate.l1.w"], params["gate.l1.b"]))
    return tape.sigmoid(tape.linear(h, params["gate.l2.w"], params["gate.l2.b"]))


def modulate(tape: Tape, beta: Tensor, gate: Tensor) -> Tensor:
    """m~ = m * g; attenuation only, stays within [0, m]."""
    return tape.mul(beta, gate)


def project(tape: Tape, seq_row: Tensor, params: ModelParams) -> Tensor:
    """Two-dimensional sequence representation for one (1, 8) feature row."""
    h = tape.relu(tape.linear(seq_row, params["proj.l1.w"], params["proj.l1.b"]))
    return tape.linear(h, params["proj.l2.w"], params["proj.l2.b"])


def fuse(tape: Tape, modulated: Tensor, positional: Tensor, projection: Tensor) -> Tensor:
    """[m~ | f | p] rows; widths must be 1, 9 and 2."""
    if modulated.shape[1] != 1 or positional.shape[1] != POS_DIM or projection.shape[1] != 2:
        raise DimMismatch(
            f"fuse: widths {modulated.shape[1]}, {positional.shape[1]}, {projection.shape[1]}")
    return tape.concat([modulated, positional, projection], axis=1)


# -- checkpoint serialisation -------------------------------------------------

CHECKPOINT_SCHEMA = 1
_MAGIC = b"MGC1"


def save_checkpoint(path, model: AgeModel, *, seed: int, extra: dict | None = None) -> None:
    """JSON header + little-endian float64 blobs in declared parameter order."""
    cfg = asdict(model.config)
    header = {
        "schema_version": CHECKPOINT_SCHEMA,
        "config": cfg,
        "seed": seed,
        "delta": model.graph.stats.delta,
        "params": [[n, list(t.data.shape)] for n, t in model.params.items()],
    }
    if extra:
        header["extra"] = extra
    blob = b"".join(np.ascontiguousarray(t.data, dtype="<f8").tobytes()
                    for _, t in model.params.items())
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, dict]:
    """Returns (config, params, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("schema_version") != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {header.get('schema_version')}")
        entries = []
        for name, shape in header["params"]:
            size = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * size)
            if len(raw) != 8 * size:
                raise ValueError(f"truncated checkpoint at parameter {name}")
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
            entries.append((name, param(arr)))
    cfg_dict = dict(header["config"])
    for key in ("mlp_dims", "relu_layers", "selu_layers", "dropout_layers"):
        cfg_dict[key] = tuple(cfg_dict[key])
    return ModelConfig(**cfg_dict), ModelParams(entries), header

"""Joint deep-embedded clustering model over an attributed network.

Two coupled modules share the input attributes: a fully-connected autoencoder
reconstructs the attribute matrix, and a two-layer graph-convolutional encoder
with an inner-product decoder reconstructs the adjacency. Each module derives
a Student-t soft cluster assignment from its embedding and self-trains against
a sharpened target distribution; a KL consistency penalty couples the two
assignments. All gradients are derived by hand and assembled per loss term;
there is no autodiff anywhere.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import expit

from .errors import CheckpointError, ShapeError
from .linalg import (LinearLayer, activation_grad, glorot_init, linear_forward,
                     make_layer, spmm)

TERMS = ("l_are", "kl_a", "l_gre", "kl_g", "kl_con")


@dataclass
class AeConfig:
    """Attribute autoencoder dimensions: [m, hidden..., d]; decoder mirrors.

    Hidden layers use ReLU; the final encoder layer is linear so embeddings
    keep full range; the final decoder layer is sigmoid for 0/1 attributes
    and linear otherwise.
    """

    layer_dims: list[int]
    decoder_final_activation: str = "sigmoid"

    def validate(self) -> None:
        if len(self.layer_dims) < 3:
            raise ShapeError("need at least two encoder layers ([m, hidden..., d])")
        if any(d < 1 for d in self.layer_dims):
            raise ShapeError(f"bad layer dims: {self.layer_dims}")
        if self.decoder_final_activation not in ("sigmoid", "identity"):
            raise ShapeError(f"bad decoder activation: {self.decoder_final_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def embed_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def encoder_activations(self) -> list[str]:
        return ["relu"] * (len(self.layer_dims) - 2) + ["identity"]

    @property
    def decoder_activations(self) -> list[str]:
        return ["relu"] * (len(self.layer_dims) - 2) + [self.decoder_final_activation]

    @classmethod
    def for_attributes(cls, attributes: np.ndarray, hidden: tuple[int, ...],
                       embed_dim: int) -> "AeConfig":
        binary = bool(np.isin(attributes, (0.0, 1.0)).all())
        return cls([attributes.shape[1], *hidden, embed_dim],
                   "sigmoid" if binary else "identity")


@dataclass
class GaeConfig:
    """Two-layer graph-convolutional encoder; no biases, no third layer."""

    input_dim: int
    hidden_dim: int = 256
    output_dim: int = 64

    def validate(self) -> None:
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ShapeError(f"bad GCN dims: {self}")


@dataclass
class LossWeights:
    """Balance coefficients: alpha scales the attribute-side clustering KL,
    beta the graph-side clustering KL, gamma the consistency KL."""

    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 1.0

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ShapeError(f"loss weights must be >= 0, got {self}")

    def as_coeffs(self) -> dict[str, float]:
        return {"l_are": 1.0, "kl_a": self.alpha,
                "l_gre": 1.0, "kl_g": self.beta, "kl_con": self.gamma}


@dataclass
class TrainConfig:
    pretrain_epochs: int = 50
    kmeans_restarts: int = 20
    max_iter: int = 200
    lr: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def validate(self) -> None:
        if self.pretrain_epochs < 0 or self.max_iter < 0 or self.kmeans_restarts < 1:
            raise ShapeError(f"bad iteration counts in {self}")
        if self.lr <= 0:
            raise ShapeError(f"lr must be > 0, got {self.lr}")
        self.weights.validate()


class ModelState:
    """All trainable parameters: AE layers, GCN weights, both center matrices."""

    def __init__(self, ae_encoder: list[LinearLayer], ae_decoder: list[LinearLayer],
                 gcn_w1: np.ndarray, gcn_w2: np.ndarray,
                 centers_a: np.ndarray, centers_g: np.ndarray):
        self.ae_encoder = ae_encoder
        self.ae_decoder = ae_decoder
        self.gcn_w1 = gcn_w1
        self.gcn_w2 = gcn_w2
        self.centers_a = centers_a
        self.centers_g = centers_g

    @property
    def num_clusters(self) -> int:
        return self.centers_a.shape[0]

    def ae_parameters(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.ae_encoder):
            params[f"ae_enc{i}_W"] = layer.weight
            params[f"ae_enc{i}_b"] = layer.bias
        for i, layer in enumerate(self.ae_decoder):
            params[f"ae_dec{i}_W"] = layer.weight
            params[f"ae_dec{i}_b"] = layer.bias
        return params

    def gae_parameters(self) -> dict[str, np.ndarray]:
        return {"gcn_w1": self.gcn_w1, "gcn_w2": self.gcn_w2}

    def parameters(self) -> dict[str, np.ndarray]:
        params = self.ae_parameters()
        params.update(self.gae_parameters())
        params["centers_a"] = self.centers_a
        params["centers_g"] = self.centers_g
        return params

    def copy(self) -> "ModelState":
        return ModelState([l.copy() for l in self.ae_encoder],
                          [l.copy() for l in self.ae_decoder],
                          self.gcn_w1.copy(), self.gcn_w2.copy(),
                          self.centers_a.copy(), self.centers_g.copy())


def init_model(ae_cfg: AeConfig, gae_cfg: GaeConfig, num_clusters: int,
               rng: np.random.Generator) -> ModelState:
    """Glorot weights, zero biases; cluster centers start at zero until the
    pretraining K-means fills them in."""
    ae_cfg.validate()
    gae_cfg.validate()
    if num_clusters < 2:
        raise ShapeError(f"need at least 2 clusters, got {num_clusters}")
    dims = ae_cfg.layer_dims
    enc = [make_layer(dims[i], dims[i + 1], act, rng)
           for i, act in enumerate(ae_cfg.encoder_activations)]
    rdims = dims[::-1]
    dec = [make_layer(rdims[i], rdims[i + 1], act, rng)
           for i, act in enumerate(ae_cfg.decoder_activations)]
    gcn_w1 = glorot_init(gae_cfg.input_dim, gae_cfg.hidden_dim, rng)
    gcn_w2 = glorot_init(gae_cfg.hidden_dim, gae_cfg.output_dim, rng)
    centers_a = np.zeros((num_clusters, ae_cfg.embed_dim))
    centers_g = np.zeros((num_clusters, gae_cfg.output_dim))
    return ModelState(enc, dec, gcn_w1, gcn_w2, centers_a, centers_g)


# ---------------------------------------------------------------------------
# forward passes


def _stack_forward(layers: list[LinearLayer], x: np.ndarray):
    """Forward through a layer list; caches (input, output) pairs for backward."""
    caches = []
    h = x
    for layer in layers:
        out = linear_forward(layer, h)
        caches.append((h, out))
        h = out
    return h, caches


def _stack_backward(layers: list[LinearLayer], caches, upstream: np.ndarray):
    """Backward through a layer list; returns ({name_suffix: grad}, grad_input)."""
    grads: dict[str, np.ndarray] = {}
    g = upstream
    for i in range(len(layers) - 1, -1, -1):
        inp, out = caches[i]
        d = g * activation_grad(layers[i].activation, out)
        grads[f"{i}_W"] = inp.T @ d
        grads[f"{i}_b"] = d.sum(axis=0)
        g = d @ layers[i].weight.T
    return grads, g


def ae_forward(state: ModelState, x: np.ndarray):
    """(embedding, reconstructed attributes) for the attribute autoencoder."""
    z_a, _ = _stack_forward(state.ae_encoder, x)
    x_hat, _ = _stack_forward(state.ae_decoder, z_a)
    return z_a, x_hat


def gcn_forward(state: ModelState, norm_adj, x: np.ndarray) -> np.ndarray:
    """Two graph convolutions: norm_adj @ relu(norm_adj @ x @ W1) @ W2."""
    z_g, _ = _gcn_forward_cached(state, norm_adj, x)
    return z_g


def _gcn_forward_cached(state: ModelState, norm_adj, x: np.ndarray):
    if x.shape[1] != state.gcn_w1.shape[0]:
        raise ShapeError(f"gcn_forward: {x.shape[1]} attrs vs W1 {state.gcn_w1.shape}")
    a1 = spmm(norm_adj, x)
    h1 = np.maximum(a1 @ state.gcn_w1, 0.0)
    a2 = spmm(norm_adj, h1)
    z_g = a2 @ state.gcn_w2
    return z_g, (a1, h1, a2)


def _gcn_backward(state: ModelState, norm_adj, cache, upstream: np.ndarray):
    a1, h1, a2 = cache
    g_w2 = a2.T @ upstream
    g = spmm(norm_adj, upstream @ state.gcn_w2.T)  # norm_adj is symmetric
    g *= (h1 > 0.0)
    g_w1 = a1.T @ g
    return {"gcn_w1": g_w1, "gcn_w2": g_w2}


def inner_product_decode(z: np.ndarray) -> np.ndarray:
    """sigmoid(z @ z.T): dense symmetric edge-probability matrix."""
    return expit(z @ z.T)


# ---------------------------------------------------------------------------
# losses


def ae_recon_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Squared-error attribute reconstruction, normalized by 2n."""
    if x.shape != x_hat.shape:
        raise ShapeError(f"ae_recon_loss: {x.shape} vs {x_hat.shape}")
    diff = x - x_hat
    return float((diff * diff).sum() / (2.0 * x.shape[0]))


def gae_recon_loss(adjacency, a_hat: np.ndarray) -> float:
    """Squared-error adjacency reconstruction, normalized by 2n.

    The raw 0/1 adjacency may be sparse; it is never densified.
    """
    n = a_hat.shape[0]
    if adjacency.shape != a_hat.shape:
        raise ShapeError(f"gae_recon_loss: {adjacency.shape} vs {a_hat.shape}")
    if sparse.issparse(adjacency):
        coo = adjacency.tocoo()
        sq = float((a_hat * a_hat).sum())
        cross = float(a_hat[coo.row, coo.col].sum())
        return (sq - 2.0 * cross + coo.nnz) / (2.0 * n)
    diff = np.asarray(adjacency, dtype=np.float64) - a_hat
    return float((diff * diff).sum() / (2.0 * n))


def _gae_recon_z_grad(adj_rows, adj_cols, a_hat: np.ndarray, z: np.ndarray,
                      coeff: float) -> np.ndarray:
    """Gradient of coeff * gae_recon_loss w.r.t. z, reusing a_hat's buffer
    scale (one n x n workspace, the raw adjacency stays sparse)."""
    n = a_hat.shape[0]
    e = a_hat * (1.0 - a_hat)
    corr = e[adj_rows, adj_cols].copy()
    e *= a_hat
    e *= coeff / n
    e[adj_rows, adj_cols] -= corr * (coeff / n)
    return 2.0 * (e @ z)  # e is symmetric, so (e + e.T) @ z == 2 e @ z


def soft_assignment(z: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Row-stochastic Student-t kernel similarities to the cluster centers."""
    q, _ = _soft_assignment_cached(z, centers)
    return q


def _soft_assignment_cached(z: np.ndarray, centers: np.ndarray):
    if z.shape[1] != centers.shape[1]:
        raise ShapeError(f"soft_assignment: dims {z.shape} vs centers {centers.shape}")
    d2 = ((z * z).sum(axis=1)[:, None] + (centers * centers).sum(axis=1)[None, :]
          - 2.0 * z @ centers.T)
    np.maximum(d2, 0.0, out=d2)
    u = 1.0 / (1.0 + d2)
    r = u.sum(axis=1)
    q = u / r[:, None]
    return q, (u, r, q)


def _soft_assignment_backward(z: np.ndarray, centers: np.ndarray, cache, dq: np.ndarray):
    """Backprop a gradient on the soft assignment to (z, centers)."""
    u, r, q = cache
    s = (dq * q).sum(axis=1)
    du = (dq - s[:, None]) / r[:, None]
    w = du * u * u
    dz = -2.0 * (w.sum(axis=1)[:, None] * z - w @ centers)
    dc = 2.0 * (w.T @ z - w.sum(axis=0)[:, None] * centers)
    return dz, dc


def target_distribution(q: np.ndarray) -> np.ndarray:
    """Sharpened self-training target: square, normalize by cluster mass,
    renormalize rows."""
    f = q.sum(axis=0)
    w = (q * q) / np.where(f > 0.0, f, 1.0)
    return w / w.sum(axis=1, keepdims=True)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """sum p * log(p / q) with the convention 0 * log(0 / x) = 0."""
    if p.shape != q.shape:
        raise ShapeError(f"kl_divergence: {p.shape} vs {q.shape}")
    if not (np.isfinite(p).all() and np.isfinite(q).all()):
        return float("nan")  # keep divergence visible to the training guard
    mask = p > 0.0
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())


# ---------------------------------------------------------------------------
# joint objective


def loss_and_grads(state: ModelState, x: np.ndarray, adjacency, norm_adj,
                   coeffs: dict[str, float], targets=None):
    """One full forward/backward pass of the joint objective.

    coeffs maps each term name in TERMS to its multiplier in the total; pass
    a one-hot dict to isolate a term. targets, when given, is the fixed pair
    (p_a, p_g); otherwise the targets are rebuilt from the current soft
    assignments (they are treated as constants either way, which is what
    makes the objective well-defined for finite differencing).

    Returns (total, terms, grads, aux) where terms holds the raw unweighted
    values, grads is keyed like state.parameters(), and aux carries
    (q_a, q_g, p_a, p_g).
    """
    n = x.shape[0]
    z_a, enc_caches = _stack_forward(state.ae_encoder, x)
    x_hat, dec_caches = _stack_forward(state.ae_decoder, z_a)
    z_g, gcn_cache = _gcn_forward_cached(state, norm_adj, x)
    a_hat = inner_product_decode(z_g)
    q_a, cache_a = _soft_assignment_cached(z_a, state.centers_a)
    q_g, cache_g = _soft_assignment_cached(z_g, state.centers_g)
    if targets is None:
        p_a = target_distribution(q_a)
        p_g = target_distribution(q_g)
    else:
        p_a, p_g = targets

    terms = {
        "l_are": ae_recon_loss(x, x_hat),
        "kl_a": kl_divergence(p_a, q_a),
        "l_gre": gae_recon_loss(adjacency, a_hat),
        "kl_g": kl_divergence(p_g, q_g),
        "kl_con": kl_divergence(q_g, q_a),
    }
    total = sum(coeffs[t] * terms[t] for t in TERMS)

    # attribute module: reconstruction path + clustering path meet at z_a
    d_xhat = coeffs["l_are"] * (x_hat - x) / n
    dec_grads, d_za = _stack_backward(state.ae_decoder, dec_caches, d_xhat)
    dq_a = -(coeffs["kl_a"] * p_a + coeffs["kl_con"] * q_g) / q_a
    d_za_clu, d_centers_a = _soft_assignment_backward(z_a, state.centers_a, cache_a, dq_a)
    enc_grads, _ = _stack_backward(state.ae_encoder, enc_caches, d_za + d_za_clu)

    # graph module: adjacency reconstruction + clustering paths meet at z_g
    coo = adjacency.tocoo() if sparse.issparse(adjacency) else sparse.coo_array(adjacency)
    d_zg = _gae_recon_z_grad(coo.row, coo.col, a_hat, z_g, coeffs["l_gre"])
    dq_g = -coeffs["kl_g"] * p_g / q_g + coeffs["kl_con"] * (np.log(q_g / q_a) + 1.0)
    d_zg_clu, d_centers_g = _soft_assignment_backward(z_g, state.centers_g, cache_g, dq_g)
    gcn_grads = _gcn_backward(state, norm_adj, gcn_cache, d_zg + d_zg_clu)

    grads = {f"ae_enc{k}": v for k, v in enc_grads.items()}
    grads.update({f"ae_dec{k}": v for k, v in dec_grads.items()})
    grads.update(gcn_grads)
    grads["centers_a"] = d_centers_a
    grads["centers_g"] = d_centers_g
    return total, terms, grads, (q_a, q_g, p_a, p_g)


def total_loss(state: ModelState, net, weights: LossWeights, norm_adj=None):
    """Joint objective value and its per-term breakdown on a network."""
    from .graph import normalize_adjacency  # local import to avoid a cycle

    weights.validate()
    if norm_adj is None:
        norm_adj = normalize_adjacency(net)
    total, terms, _, _ = loss_and_grads(state, net.attributes, net.adjacency,
                                        norm_adj, weights.as_coeffs())
    return total, terms


# ---------------------------------------------------------------------------
# checkpointing

_MAGIC = b"DUALDEC\x00"
_VERSION = 1


def save_checkpoint(path, state: ModelState, ae_cfg: AeConfig, gae_cfg: GaeConfig,
                    extra: dict | None = None) -> None:
    """Sized binary layout: magic, version byte, JSON config echo, then each
    parameter as (name, shape, float64 little-endian data)."""
    meta = {
        "ae_layer_dims": list(ae_cfg.layer_dims),
        "ae_decoder_final_activation": ae_cfg.decoder_final_activation,
        "gae_input_dim": gae_cfg.input_dim,
        "gae_hidden_dim": gae_cfg.hidden_dim,
        "gae_output_dim": gae_cfg.output_dim,
        "num_clusters": state.num_clusters,
        "extra": extra or {},
    }
    params = state.parameters()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(bytes([_VERSION]))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(params)))
    for name, value in params.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<B", value.ndim))
        for dim in value.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError(f"truncated checkpoint: wanted {count} bytes, got {len(data)}")
    return data


def load_checkpoint(path):
    """Returns (state, ae_cfg, gae_cfg, extra); rejects bad magic, version,
    or any parameter whose shape disagrees with the config echo."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise CheckpointError("bad magic header")
        version = _read_exact(fh, 1)[0]
        if version != _VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        meta_len = struct.unpack("<I", _read_exact(fh, 4))[0]
        try:
            meta = json.loads(_read_exact(fh, meta_len).decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise CheckpointError(f"bad config echo: {exc}") from None
        ae_cfg = AeConfig(list(meta["ae_layer_dims"]), meta["ae_decoder_final_activation"])
        gae_cfg = GaeConfig(meta["gae_input_dim"], meta["gae_hidden_dim"],
                            meta["gae_output_dim"])
        count = struct.unpack("<I", _read_exact(fh, 4))[0]
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len = struct.unpack("<H", _read_exact(fh, 2))[0]
            name = _read_exact(fh, name_len).decode("utf-8")
            ndim = struct.unpack("<B", _read_exact(fh, 1))[0]
            shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, size * 8), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(np.float64)

    rng = np.random.default_rng(0)  # shapes only; weights are overwritten below
    state = init_model(ae_cfg, gae_cfg, int(meta["num_clusters"]), rng)
    expected = state.parameters()
    if set(expected) != set(arrays):
        raise CheckpointError(
            f"parameter set mismatch: {sorted(set(expected) ^ set(arrays))}")
    for name, target in expected.items():
        if arrays[name].shape != target.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: file {arrays[name].shape}, "
                f"config implies {target.shape}")
        target[...] = arrays[name]
    return state, ae_cfg, gae_cfg, meta.get("extra", {})

"""K-means initialization and the joint training loop.

Training is full-batch: every epoch runs one forward pass over the whole
network, rebuilds both self-training targets from the current soft
assignments, and takes one Adam step over all parameters including the two
center matrices. A run owns its ModelState exclusively and is deterministic
given (seed, config, network).
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeError, TrainingError
from .graph import AttributedNetwork, normalize_adjacency
from .linalg import Adam
from .model import (ModelState, TrainConfig, ae_forward, ae_recon_loss,
                    gae_recon_loss, gcn_forward, inner_product_decode,
                    loss_and_grads, soft_assignment, _stack_backward,
                    _stack_forward, _gcn_forward_cached, _gcn_backward,
                    _gae_recon_z_grad, TERMS)

_DIVERGENCE_LIMIT = 1e8


def _check_term(name: str, value: float) -> None:
    if not np.isfinite(value) or abs(value) > _DIVERGENCE_LIMIT:
        raise TrainingError(name, f"loss term {name} diverged to {value!r}")


# ---------------------------------------------------------------------------
# K-means


def _lloyd(z: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100):
    n = z.shape[0]
    centers = z[rng.choice(n, size=k, replace=False)].copy()
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        d2 = ((z * z).sum(axis=1)[:, None] + (centers * centers).sum(axis=1)[None, :]
              - 2.0 * z @ centers.T)
        new_labels = d2.argmin(axis=1)
        # re-seed empty clusters to the point farthest from its own center
        own = d2[np.arange(n), new_labels].copy()
        for c in range(k):
            if not (new_labels == c).any():
                far = int(own.argmax())
                centers[c] = z[far]
                new_labels[far] = c
                own[far] = -np.inf
        if (new_labels == labels).all():
            break
        labels = new_labels
        for c in range(k):
            members = z[labels == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    d2 = ((z - centers[labels]) ** 2).sum()
    return centers, labels, float(d2)


def kmeans_full(z: np.ndarray, k: int, restarts: int, rng: np.random.Generator):
    """Best of `restarts` independent Lloyd runs by within-cluster SSE.

    Returns (centers, labels, sse)."""
    if k < 1 or k > z.shape[0]:
        raise ShapeError(f"kmeans: k={k} out of range for {z.shape[0]} points")
    best = None
    for _ in range(max(1, restarts)):
        result = _lloyd(z, k, rng)
        if best is None or result[2] < best[2]:
            best = result
    return best


def kmeans(z: np.ndarray, k: int, restarts: int, rng: np.random.Generator) -> np.ndarray:
    """Cluster centers of the best restart."""
    return kmeans_full(z, k, restarts, rng)[0]


def hard_assign(q: np.ndarray) -> np.ndarray:
    """Most probable cluster per row; ties go to the smallest index."""
    return np.asarray(q).argmax(axis=1)


def _align_centers(centers: np.ndarray, labels_own: np.ndarray,
                   labels_ref: np.ndarray) -> np.ndarray:
    """Permute center rows so cluster indices agree with a reference labeling
    as much as possible (the K-means index order is arbitrary, and the
    consistency penalty compares assignments index by index)."""
    k = centers.shape[0]
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (labels_own, labels_ref), 1)
    rows, cols = linear_sum_assignment(-table)
    permuted = np.empty_like(centers)
    permuted[cols] = centers[rows]
    return permuted


# ---------------------------------------------------------------------------
# pretraining


def _pretrain_ae(state: ModelState, x: np.ndarray, cfg: TrainConfig) -> None:
    adam = Adam(lr=cfg.lr)
    n = x.shape[0]
    params = state.ae_parameters()
    for _ in range(cfg.pretrain_epochs):
        z_a, enc_caches = _stack_forward(state.ae_encoder, x)
        x_hat, dec_caches = _stack_forward(state.ae_decoder, z_a)
        _check_term("l_are", ae_recon_loss(x, x_hat))
        dec_grads, d_za = _stack_backward(state.ae_decoder, dec_caches, (x_hat - x) / n)
        enc_grads, _ = _stack_backward(state.ae_encoder, enc_caches, d_za)
        grads = {f"ae_enc{k}": v for k, v in enc_grads.items()}
        grads.update({f"ae_dec{k}": v for k, v in dec_grads.items()})
        adam.step(params, grads)


def _pretrain_gae(state: ModelState, net: AttributedNetwork, norm_adj,
                  cfg: TrainConfig) -> None:
    adam = Adam(lr=cfg.lr)
    coo = net.adjacency.tocoo()
    params = state.gae_parameters()
    for _ in range(cfg.pretrain_epochs):
        z_g, cache = _gcn_forward_cached(state, norm_adj, net.attributes)
        a_hat = inner_product_decode(z_g)
        _check_term("l_gre", gae_recon_loss(net.adjacency, a_hat))
        d_zg = _gae_recon_z_grad(coo.row, coo.col, a_hat, z_g, 1.0)
        adam.step(params, _gcn_backward(state, norm_adj, cache, d_zg))


def pretrain(state: ModelState, net: AttributedNetwork, cfg: TrainConfig,
             rng: np.random.Generator) -> ModelState:
    """Train both autoencoders on their reconstruction losses alone, then
    initialize the two center matrices by restarted K-means on the resulting
    embeddings. Center rows of the attribute side are permuted to best agree
    with the graph side's clustering, so the consistency penalty starts from
    aligned indices."""
    cfg.validate()
    norm_adj = normalize_adjacency(net)
    _pretrain_ae(state, net.attributes, cfg)
    _pretrain_gae(state, net, norm_adj, cfg)
    z_a, _ = ae_forward(state, net.attributes)
    z_g = gcn_forward(state, norm_adj, net.attributes)
    k = state.num_clusters
    centers_a, labels_a, _ = kmeans_full(z_a, k, cfg.kmeans_restarts, rng)
    centers_g, labels_g, _ = kmeans_full(z_g, k, cfg.kmeans_restarts, rng)
    state.centers_g[...] = centers_g
    state.centers_a[...] = _align_centers(centers_a, labels_a, labels_g)
    return state


# ---------------------------------------------------------------------------
# joint training


def train(state: ModelState, net: AttributedNetwork, cfg: TrainConfig,
          monitor=None, track_metrics: bool = True):
    """Run the joint objective for cfg.max_iter full-batch Adam epochs.

    Returns (state, history); history holds one dict per epoch with the five
    raw loss terms, the weighted total, and (when labels are present and
    track_metrics is on) the accuracy/NMI of the graph-side assignment.
    monitor, when given, is called as monitor(epoch, terms, total, q_a, q_g)
    after every epoch.
    """
    from .metrics import accuracy, nmi  # local import to keep modules acyclic

    cfg.validate()
    norm_adj = normalize_adjacency(net)
    coeffs = cfg.weights.as_coeffs()
    adam = Adam(lr=cfg.lr)
    params = state.parameters()
    history: list[dict] = []
    for epoch in range(cfg.max_iter):
        total, terms, grads, (q_a, q_g, _, _) = loss_and_grads(
            state, net.attributes, net.adjacency, norm_adj, coeffs)
        for name in TERMS:
            _check_term(name, terms[name])
        record = {"epoch": epoch, **{t: terms[t] for t in TERMS}, "total": total}
        if net.labels is not None and track_metrics:
            pred = hard_assign(q_g)
            record["acc_qg"] = accuracy(pred, net.labels)
            record["nmi_qg"] = nmi(pred, net.labels)
        history.append(record)
        if monitor is not None:
            monitor(epoch, terms, total, q_a, q_g)
        adam.step(params, grads)
    return state, history


def extract_outputs(state: ModelState, net: AttributedNetwork, restarts: int,
                    rng: np.random.Generator) -> dict[str, np.ndarray]:
    """The four clustering outputs of a trained model.

    Qg (the canonical output) and Qa are the hard assignments of the two soft
    distributions; Zg_clu and Za_clu re-run K-means on the two embeddings.
    """
    norm_adj = normalize_adjacency(net)
    z_a, _ = ae_forward(state, net.attributes)
    z_g = gcn_forward(state, norm_adj, net.attributes)
    k = state.num_clusters
    return {
        "Qg": hard_assign(soft_assignment(z_g, state.centers_g)),
        "Qa": hard_assign(soft_assignment(z_a, state.centers_a)),
        "Zg_clu": kmeans_full(z_g, k, restarts, rng)[1],
        "Za_clu": kmeans_full(z_a, k, restarts, rng)[1],
    }

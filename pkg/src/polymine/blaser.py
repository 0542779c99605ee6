"""BLASER 2.0 style quality estimation over sentence embeddings.

The unsupervised score averages two cosines; the supervised and QE scores are a
small tanh MLP over concatenated embedding features, trained here with plain
mini-batch SGD and hand-written backpropagation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConstantSeries, DimMismatch, NonFiniteLoss, PolymineError

NORM_TOL = 1e-4


def _as_unit_batch(*vs):
    arrs = [np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in vs]
    shape = arrs[0].shape
    for a in arrs:
        if a.shape != shape:
            raise DimMismatch(f"embedding shapes differ: {[x.shape for x in arrs]}")
        norms = np.linalg.norm(a, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise PolymineError("BLASER inputs must be L2-normalized")
    return arrs


def score_unsupervised(h_src, h_mt, h_ref):
    """Mean of cos(src, mt) and cos(ref, mt). Scalar for vectors, array for batches."""
    single = np.ndim(h_src) == 1
    s, m, r = _as_unit_batch(h_src, h_mt, h_ref)
    out = (np.einsum("ij,ij->i", s, m) + np.einsum("ij,ij->i", r, m)) / 2.0
    return float(out[0]) if single else out


def features_supervised(h_src, h_mt, h_ref) -> np.ndarray:
    """[ref; mt; src*mt; |src-mt|; ref*mt; |ref-mt|] per row (6d features)."""
    single = np.ndim(h_src) == 1
    s, m, r = _as_unit_batch(h_src, h_mt, h_ref)
    x = np.concatenate([r, m, s * m, np.abs(s - m), r * m, np.abs(r - m)], axis=1)
    return x[0] if single else x


def features_qe(h_src, h_mt) -> np.ndarray:
    """[src; mt; src*mt; |src-mt|] per row (4d features, reference-free)."""
    single = np.ndim(h_src) == 1
    s, m = _as_unit_batch(h_src, h_mt)
    x = np.concatenate([s, m, s * m, np.abs(s - m)], axis=1)
    return x[0] if single else x


@dataclass
class BlaserModel:
    weights: list  # W1 (hid1, in), W2 (hid2, hid1), W3 (1, hid2)
    biases: list
    dropout_p: float = 0.5
    clamp_output: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "BlaserModel":
        return BlaserModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.dropout_p,
            self.clamp_output,
            dict(self.metadata),
        )

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.layer_dims[0]:
            raise DimMismatch(f"features have length {x.shape[1]}, model expects {self.layer_dims[0]}")
        (w1, w2, w3), (b1, b2, b3) = self.weights, self.biases
        y = (np.tanh(np.tanh(x @ w1.T + b1) @ w2.T + b2) @ w3.T + b3)[:, 0]
        return np.clip(y, 1.0, 5.0) if self.clamp_output else y


def score_supervised(model: BlaserModel, feats) -> float:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 1:
        raise DimMismatch("score_supervised takes one feature vector; use BlaserModel.predict for batches")
    return float(model.predict(feats)[0])


def init_model(layer_dims: Sequence[int], seed: int = 0, dropout_p: float = 0.5) -> BlaserModel:
    if len(layer_dims) != 4 or layer_dims[-1] != 1:
        raise PolymineError(f"layer_dims must be [in, hid1, hid2, 1], got {list(layer_dims)}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return BlaserModel(weights, biases, dropout_p, metadata={"seed": seed})


def loss_and_grads(model: BlaserModel, x, y, weight_decay: float = 0.0, masks=None):
    """MSE + 0.5*weight_decay*||W||^2 and its gradients w.r.t. every parameter.

    `masks` are optional (m1, m2) multiplicative dropout masks for the two hidden
    layers, already scaled by 1/(1-p).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = x.shape[0]
    (w1, w2, w3), (b1, b2, b3) = model.weights, model.biases
    m1, m2 = masks if masks is not None else (1.0, 1.0)

    a1 = np.tanh(x @ w1.T + b1)
    d1 = a1 * m1
    a2 = np.tanh(d1 @ w2.T + b2)
    d2 = a2 * m2
    out = (d2 @ w3.T + b3)[:, 0]
    err = out - y
    loss = float(np.mean(err**2)) + 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in model.weights)

    g_out = (2.0 / n) * err[:, None]
    gw3 = g_out.T @ d2 + weight_decay * w3
    gb3 = g_out.sum(axis=0)
    g_z2 = (g_out @ w3) * m2 * (1.0 - a2**2)
    gw2 = g_z2.T @ d1 + weight_decay * w2
    gb2 = g_z2.sum(axis=0)
    g_z1 = (g_z2 @ w2) * m1 * (1.0 - a1**2)
    gw1 = g_z1.T @ x + weight_decay * w1
    gb1 = g_z1.sum(axis=0)
    return loss, [gw1, gw2, gw3], [gb1, gb2, gb3]


@dataclass
class TrainConfig:
    hidden: tuple = (3072, 1536)
    dropout: float = 0.5
    weight_decay: float = 0.1
    batch_size: int = 1024
    epochs: int = 50
    lr: float = 0.1
    seed: int = 0


def train(x, y, cfg: TrainConfig = TrainConfig(), init: Optional[BlaserModel] = None):
    """Mini-batch SGD on MSE with learning rate decaying linearly to zero.

    Returns (model, per-step training losses).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise PolymineError("need a non-empty (n, d) feature matrix and n labels")
    if not np.all(np.isfinite(y)):
        raise PolymineError("labels must be finite")
    rng = np.random.default_rng(cfg.seed)
    model = init.copy() if init is not None else init_model([x.shape[1], *cfg.hidden, 1], seed=cfg.seed)
    model.dropout_p = cfg.dropout
    n = x.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    keep = 1.0 - cfg.dropout
    losses = []
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            masks = None
            if cfg.dropout > 0:
                masks = tuple(
                    (rng.random((len(idx), w.shape[0])) < keep) / keep for w in model.weights[:2]
                )
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                loss, gw, gb = loss_and_grads(model, x[idx], y[idx], cfg.weight_decay, masks)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss={loss} at epoch {epoch}, step {step}, lr={cfg.lr * (1 - step / total)}")
            lr = cfg.lr * (1.0 - step / total)
            for p, g in zip(model.weights + model.biases, gw + gb):
                p -= lr * g
            losses.append(loss)
            step += 1
    model.metadata = {"seed": cfg.seed, "hyperparameters": {**asdict(cfg), "hidden": list(cfg.hidden)}}
    return model, losses


def _ranks(v: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    sv = v[order]
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(da @ da) * float(db @ db))
    if den == 0:
        raise ConstantSeries("correlation undefined for a constant series")
    return float(da @ db) / den


def correlate(preds, labels) -> dict:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise PolymineError("preds and labels must be equal-length 1-d sequences")
    if len(p) < 3:
        raise PolymineError("need at least 3 points")
    return {"pearson": _pearson(p, t), "spearman": _pearson(_ranks(p), _ranks(t))}


def save_model(path, model: BlaserModel) -> None:
    doc = {
        "layer_dims": model.layer_dims,
        "weights": [w.reshape(-1).tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "activation": "tanh",
        "dropout_p": model.dropout_p,
        "clamp_output": model.clamp_output,
        "metadata": model.metadata,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> BlaserModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    dims = doc["layer_dims"]
    weights = [np.asarray(w, dtype=np.float64).reshape(o, i) for w, i, o in zip(doc["weights"], dims[:-1], dims[1:])]
    biases = [np.asarray(b, dtype=np.float64) for b in doc["biases"]]
    return BlaserModel(weights, biases, doc.get("dropout_p", 0.5), doc.get("clamp_output", False), doc.get("metadata", {}))

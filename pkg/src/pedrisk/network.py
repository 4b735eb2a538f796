"""Fully-connected and pedigree-convolutional networks written against numpy.

Parameters live in a flat tuple of arrays so that Adam, weight decay,
gradient checks and checkpoints all treat both architectures alike:

* fcnn / logistic: ``W1, b1, ..., WL, bL, w_out, b_out``, ``Wl`` is
  ``(N_l, N_{l-1})``;
* cnn: ``F1, c1, ..., FL, cL, w_out, b_out``, ``Fl`` is ``(M_l, U * M_{l-1})``.

Inputs are flattened standardized pedigrees. A CNN reads slot features
through a neighbourhood map whose sentinel entry points at a zero row;
counselee covariates beyond the slot block are joined to the counselee's
last-layer activations before the output unit.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import _accel
from .encoder import N_FEATURES

KINDS = ("fcnn", "cnn", "logistic")
ACTIVATIONS = ("relu", "elu", "logistic")
LOSSES = ("mse", "cross_entropy")
SCHEDULES = ("constant", "cosine")


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: str = "fcnn"
    hidden: tuple = (30, 10)
    activation: str = "elu"
    dropout: float = 0.2
    loss: str = "mse"
    weight_decay: float = 0.0
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 256
    lr_schedule: str = "constant"
    seed: int = 0
    n_extra: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if (self.kind == "logistic") != (len(self.hidden) == 0):
            raise ValueError("logistic kind means no hidden layers, and only it may have none")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.lr_schedule not in SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {SCHEDULES}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if min(self.hidden, default=1) < 1 or self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid layer sizes, epochs, batch size or learning rate")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")

    @classmethod
    def fcnn(cls, **kw):
        return cls(**{"kind": "fcnn", "hidden": (30, 10), "epochs": 30, **kw})

    @classmethod
    def cnn(cls, **kw):
        return cls(**{"kind": "cnn", "hidden": (10, 5), "epochs": 15, **kw})

    @classmethod
    def logistic(cls, **kw):
        return cls(**{"kind": "logistic", "hidden": (), "dropout": 0.0, "epochs": 30, **kw})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d) -> "ArchitectureSpec":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class NetworkParams:
    spec: ArchitectureSpec
    arrays: tuple
    n_inputs: int
    nbr: Optional[np.ndarray] = None  # cnn only, (slots, U)
    meta: dict = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return 0 if self.nbr is None else self.nbr.shape[0]

    def weights(self):
        """Indices of the arrays that weight decay applies to."""
        return range(0, len(self.arrays), 2)

    def with_arrays(self, arrays) -> "NetworkParams":
        return replace(self, arrays=tuple(arrays))

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays)


# ---- activations ------------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    return _sigmoid(z)


def _act_grad(name, z, h):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "elu":
        return np.where(z > 0, 1.0, h + 1.0)
    return h * (1.0 - h)


# ---- initialisation -----------------------------------------------------------

def _glorot(rng, fan_out, fan_in):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_out, fan_in))


def init_params(spec: ArchitectureSpec, n_inputs: int, nbr=None, seed=None) -> NetworkParams:
    """Glorot-uniform weights and zero biases.

    For a CNN ``n_inputs`` counts the slot block plus ``spec.n_extra``
    covariates, and ``nbr`` is the neighbourhood map.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    arrays = []
    if spec.kind == "cnn":
        if nbr is None:
            raise ValueError("a CNN needs a neighbourhood map")
        nbr = np.asarray(nbr, dtype=np.int64)
        S, U = nbr.shape
        if n_inputs != S * N_FEATURES + spec.n_extra:
            raise ValueError(f"CNN input length {n_inputs} does not match {S} slots and {spec.n_extra} extras")
        prev = N_FEATURES
        for m in spec.hidden:
            arrays += [_glorot(rng, m, U * prev), np.zeros(m)]
            prev = m
        arrays += [_glorot(rng, 1, prev + spec.n_extra)[0], np.zeros(1)]
    else:
        prev = n_inputs
        for n in spec.hidden:
            arrays += [_glorot(rng, n, prev), np.zeros(n)]
            prev = n
        arrays += [_glorot(rng, 1, prev)[0], np.zeros(1)]
        nbr = None
    return NetworkParams(spec, tuple(arrays), int(n_inputs), nbr)


def zero_params(params: NetworkParams) -> NetworkParams:
    return params.with_arrays(np.zeros_like(a) for a in params.arrays)


# ---- scatter kernel for the CNN backward pass ------------------------------

@_accel.njit
def _scatter_numba(dG, nbr, n_rows):
    B, S, U, M = dG.shape
    out = np.zeros((B, n_rows, M))
    for b in range(B):
        for r in range(S):
            for u in range(U):
                t = nbr[r, u]
                for c in range(M):
                    out[b, t, c] += dG[b, r, u, c]
    return out


def _scatter_numpy(dG, nbr, n_rows):
    B, S, U, M = dG.shape
    onehot = np.zeros((n_rows, S * U))
    onehot[nbr.ravel(), np.arange(S * U)] = 1.0
    return np.matmul(onehot, dG.reshape(B, S * U, M))


def scatter_neighbors(dG, nbr, n_rows, use_numba=None):
    """Sum ``dG[b, r, u]`` into row ``nbr[r, u]``; inverse of the neighbourhood gather."""
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    if use_numba:
        return _scatter_numba(np.ascontiguousarray(dG), nbr, n_rows)
    return _scatter_numpy(dG, nbr, n_rows)


# ---- forward passes ---------------------------------------------------------

def _check_input(params, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != params.n_inputs:
        raise ValueError(f"input has {X.shape[1]} columns, network expects {params.n_inputs}")
    return X


def _forward_dense(params, X, train=False, rng=None):
    spec = params.spec
    a = X
    cache = []
    L = len(spec.hidden)
    for l in range(L):
        W, b = params.arrays[2 * l], params.arrays[2 * l + 1]
        z = a @ W.T + b
        h = _act(spec.activation, z)
        mask = None
        if train and l == 0 and spec.dropout > 0:
            mask = (rng.random(h.shape) >= spec.dropout) / (1.0 - spec.dropout)
            h = h * mask
        cache.append((a, z, h, mask))
        a = h
    w, b = params.arrays[-2], params.arrays[-1]
    zo = a @ w + b[0]
    return zo, (cache, a)


def _forward_conv(params, X, train=False, rng=None):
    spec = params.spec
    nbr = params.nbr
    S, U = nbr.shape
    B = X.shape[0]
    a = np.concatenate([X[:, :S * N_FEATURES].reshape(B, S, N_FEATURES), np.zeros((B, 1, N_FEATURES))], axis=1)
    extra = X[:, S * N_FEATURES:]
    cache = []
    for l in range(len(spec.hidden)):
        F, c = params.arrays[2 * l], params.arrays[2 * l + 1]
        G = a[:, nbr].reshape(B, S, -1)
        z = G @ F.T + c
        h = _act(spec.activation, z)
        mask = None
        if train and l == 0 and spec.dropout > 0:
            mask = (rng.random(h.shape) >= spec.dropout) / (1.0 - spec.dropout)
            h = h * mask
        cache.append((G, z, h, mask))
        a = np.concatenate([h, np.zeros((B, 1, h.shape[2]))], axis=1)
    v = np.concatenate([cache[-1][2][:, 0, :], extra], axis=1)
    w, b = params.arrays[-2], params.arrays[-1]
    zo = v @ w + b[0]
    return zo, (cache, v)


def output_logits(params: NetworkParams, X, train=False, rng=None):
    X = _check_input(params, X)
    if params.spec.kind == "cnn":
        return _forward_conv(params, X, train, rng)
    return _forward_dense(params, X, train, rng)


def forward_fcnn(params: NetworkParams, X) -> np.ndarray:
    """Predicted probabilities of a dense network (dropout off)."""
    if params.spec.kind == "cnn":
        raise ValueError("forward_fcnn needs a dense or logistic network")
    return _sigmoid(output_logits(params, X)[0])


def forward_cnn(params: NetworkParams, X, nbr=None) -> np.ndarray:
    """Predicted probabilities of a pedigree CNN (dropout off)."""
    if params.spec.kind != "cnn":
        raise ValueError("forward_cnn needs a CNN")
    if nbr is not None:
        nbr = np.asarray(nbr, dtype=np.int64)
        if nbr.shape != params.nbr.shape:
            raise ValueError(f"neighbourhood map has shape {nbr.shape}, expected {params.nbr.shape}")
        params = replace(params, nbr=nbr)
    return _sigmoid(output_logits(params, X)[0])


def predict(params: NetworkParams, X, batch: int = 8192) -> np.ndarray:
    X = _check_input(params, X)
    out = np.empty(X.shape[0])
    for i in range(0, X.shape[0], batch):
        out[i:i + batch] = _sigmoid(output_logits(params, X[i:i + batch])[0])
    return out


# ---- loss and gradients -----------------------------------------------------

def _data_loss(loss, zo, y):
    if loss == "mse":
        p = _sigmoid(zo)
        return (p - y) ** 2, 2.0 * (p - y) * p * (1.0 - p)
    # log(1 + e^z) - y z, stable for large |z|
    c = np.logaddexp(0.0, zo) - y * zo
    return c, _sigmoid(zo) - y


def loss_and_grad(params: NetworkParams, X, y, w=None, train=False, rng=None, norm=None):
    """Objective ``sum(w*C)/norm + weight_decay/2 * sum ||W||^2`` and its gradient.

    ``norm`` defaults to ``sum(w)``.
    """
    spec = params.spec
    X = _check_input(params, X)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    norm = w.sum() if norm is None else norm
    zo, (cache, last) = output_logits(params, X, train, rng)
    c, dzo = _data_loss(spec.loss, zo, y)
    obj = float(w @ c) / norm
    dzo = dzo * w / norm
    grads = [None] * len(params.arrays)
    grads[-2] = last.T @ dzo
    grads[-1] = np.array([dzo.sum()])
    wout = params.arrays[-2]
    if spec.kind == "cnn":
        S = params.n_slots
        m_last = spec.hidden[-1]
        B = X.shape[0]
        dA = np.zeros((B, S, m_last))
        dA[:, 0, :] = np.outer(dzo, wout[:m_last])
        for l in reversed(range(len(spec.hidden))):
            G, z, h, mask = cache[l]
            F = params.arrays[2 * l]
            dh = dA if mask is None else dA * mask
            hh = h if mask is None else _act(spec.activation, z)
            dz = dh * _act_grad(spec.activation, z, hh)
            M = dz.shape[2]
            grads[2 * l] = dz.reshape(-1, M).T @ G.reshape(-1, G.shape[2])
            grads[2 * l + 1] = dz.sum(axis=(0, 1))
            if l > 0:
                dG = (dz @ F).reshape(B, S, params.nbr.shape[1], -1)
                dA = scatter_neighbors(dG, params.nbr, S + 1)[:, :S, :]
    else:
        da = np.outer(dzo, wout)
        for l in reversed(range(len(spec.hidden))):
            a_in, z, h, mask = cache[l]
            W = params.arrays[2 * l]
            dh = da if mask is None else da * mask
            hh = h if mask is None else _act(spec.activation, z)
            dz = dh * _act_grad(spec.activation, z, hh)
            grads[2 * l] = dz.T @ a_in
            grads[2 * l + 1] = dz.sum(axis=0)
            if l > 0:
                da = dz @ W
    if spec.weight_decay:
        for i in params.weights():
            obj += 0.5 * spec.weight_decay * float(np.sum(params.arrays[i] ** 2))
            grads[i] = grads[i] + spec.weight_decay * params.arrays[i]
    return obj, grads


# ---- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    params: NetworkParams
    loss_trace: list


def train(spec: ArchitectureSpec, X, y, sample_weights=None, nbr=None, init: NetworkParams | None = None,
          verbose: bool = False) -> TrainResult:
    """Minibatch Adam on the weighted objective; deterministic for a given ``spec.seed``.

    Returns the fitted parameters and the mean objective of each epoch.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one label per row")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    w = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if (w < 0).any() or w.shape != y.shape:
        raise ValueError("sample weights must be nonnegative, one per row")
    if init is None:
        params = init_params(spec, X.shape[1], nbr)
        rate = float(np.clip(np.average(y, weights=w) if w.sum() > 0 else 0.5, 1e-6, 1 - 1e-6))
        # start the output unit at the base rate rather than at 0.5
        params = params.with_arrays(params.arrays[:-1] + (np.array([np.log(rate / (1 - rate))]),))
    else:
        params = init
    rng = np.random.default_rng([spec.seed, 1])
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = [np.zeros_like(a) for a in params.arrays]
    v = [np.zeros_like(a) for a in params.arrays]
    arrays = [a.copy() for a in params.arrays]
    step = 0
    mean_w = w.mean() if len(w) else 1.0
    trace = []
    n = len(y)
    total_steps = spec.epochs * -(-n // spec.batch_size)
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, spec.batch_size):
            idx = order[lo:lo + spec.batch_size]
            cur = params.with_arrays(arrays)
            obj, grads = loss_and_grad(cur, X[idx], y[idx], w[idx], train=True, rng=rng,
                                       norm=len(idx) * mean_w)
            if not np.isfinite(obj) or not all(np.isfinite(g).all() for g in grads):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch starting {lo} "
                                   f"(lr={spec.lr}, activation={spec.activation})")
            lr = spec.lr
            if spec.lr_schedule == "cosine":
                lr *= 0.5 * (1.0 + np.cos(np.pi * step / total_steps))
            step += 1
            for i, g in enumerate(grads):
                m[i] = beta1 * m[i] + (1 - beta1) * g
                v[i] = beta2 * v[i] + (1 - beta2) * g * g
                mhat = m[i] / (1 - beta1 ** step)
                vhat = v[i] / (1 - beta2 ** step)
                arrays[i] = arrays[i] - lr * mhat / (np.sqrt(vhat) + eps)
            total += obj * len(idx)
            seen += len(idx)
        trace.append(total / max(seen, 1))
        if verbose:
            print(f"epoch {epoch + 1}/{spec.epochs} loss {trace[-1]:.6f}")
    return TrainResult(params.with_arrays(arrays), trace)


# ---- gradient check -----------------------------------------------------------

def gradient_check(params: NetworkParams, X, y, w=None, n_checks: int = 200, step: float = 1e-5,
                   seed: int = 0) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    Runs with dropout off over ``n_checks`` parameters drawn uniformly from
    all arrays. The relative error is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_and_grad(params, X, y, w)
    sizes = np.array([a.size for a in params.arrays])
    flat = rng.choice(sizes.sum(), size=min(n_checks, int(sizes.sum())), replace=False)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for f in flat:
        i = int(np.searchsorted(bounds, f, side="right") - 1)
        j = int(f - bounds[i])
        vals = []
        for sgn in (1, -1):
            arrays = [a.copy() for a in params.arrays]
            arrays[i].reshape(-1)[j] += sgn * step
            vals.append(loss_and_grad(params.with_arrays(arrays), X, y, w)[0])
        num = (vals[0] - vals[1]) / (2 * step)
        ana = float(grads[i].reshape(-1)[j])
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return worst


# ---- random search ------------------------------------------------------------

@dataclass(frozen=True)
class SearchSpace:
    layers: tuple = (1, 3)
    widths: tuple = (10, 100)
    filters: tuple = (3, 10)
    lr: tuple = (1e-4, 1e-2)
    weight_decay: tuple = (0.0, 0.01)
    activations: tuple = ("relu", "elu")
    dropout: tuple = (0.0, 0.5)

    def validate(self):
        if not self.activations:
            raise ValueError("search space has no activations")
        for name in ("layers", "widths", "filters", "lr", "weight_decay", "dropout"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"search range {name} is empty")
        if self.layers[0] < 1 or self.lr[0] <= 0:
            raise ValueError("search space needs at least one layer and a positive learning rate")

    def sample(self, rng, base: ArchitectureSpec) -> ArchitectureSpec:
        L = int(rng.integers(self.layers[0], self.layers[1] + 1))
        lo, hi = self.filters if base.kind == "cnn" else self.widths
        hidden = tuple(int(x) for x in rng.integers(lo, hi + 1, size=L))
        lr = float(np.exp(rng.uniform(np.log(self.lr[0]), np.log(self.lr[1]))))
        return replace(base, hidden=hidden, lr=lr,
                       weight_decay=float(rng.uniform(*self.weight_decay)),
                       activation=str(self.activations[int(rng.integers(len(self.activations)))]),
                       dropout=float(rng.uniform(*self.dropout)),
                       seed=int(rng.integers(2**31)))


def random_search(space: SearchSpace, X, y, budget: int, seed: int = 0,
                  base: ArchitectureSpec | None = None, nbr=None, sample_weights=None):
    """Sample ``budget`` specs, fit each on 90% of the data, keep the best held-out AUC.

    Returns ``(best_spec, log)``; ``log`` has one record per candidate.
    """
    from .metrics import auc

    if budget < 1:
        raise ValueError("budget must be at least 1")
    space.validate()
    base = base or ArchitectureSpec.fcnn()
    if base.kind == "logistic":
        raise ValueError("random search tunes fcnn or cnn architectures")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    perm = np.random.default_rng([seed, 9]).permutation(len(y))
    cut = int(round(0.9 * len(y)))
    tr, va = perm[:cut], perm[cut:]
    w = None if sample_weights is None else np.asarray(sample_weights)
    log = []
    best, best_score = None, -np.inf
    for k in range(budget):
        spec = space.sample(rng, base)
        try:
            res = train(spec, X[tr], y[tr], None if w is None else w[tr], nbr=nbr)
            score = auc(predict(res.params, X[va]), y[va])
        except NumericError as exc:
            score, res = float("nan"), None
            log.append({"candidate": k, "spec": spec.to_dict(), "auc": None, "error": str(exc)})
            continue
        log.append({"candidate": k, "spec": spec.to_dict(), "auc": score})
        if best is None or (score is not None and np.isfinite(score) and score > best_score):
            best, best_score = spec, score
    if best is None:
        raise NumericError("every candidate failed to train")
    return best, log


def summarize_search(log) -> dict:
    scores = [r["auc"] for r in log if r.get("auc") is not None and np.isfinite(r["auc"])]
    return {"n": len(log), "min_auc": min(scores, default=None), "max_auc": max(scores, default=None)}


# ---- checkpoints ----------------------------------------------------------------

MAGIC = b"PEDRISKNN"
VERSION = 1


def save_checkpoint(path, params: NetworkParams, scaler=None, ref=None) -> None:
    """Header (JSON) then every array as little-endian float64, in declared order."""
    header = {
        "version": VERSION, "kind": params.spec.kind, "spec": params.spec.to_dict(),
        "n_inputs": params.n_inputs, "shapes": [list(a.shape) for a in params.arrays],
        "nbr": None if params.nbr is None else params.nbr.tolist(),
        "ref": None if ref is None else ref.to_dict(),
        "ref_hash": None if ref is None else ref.digest(),
        "scaler": None if scaler is None else scaler.to_dict(),
        "meta": params.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for a in params.arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, scaler or None, reference or None)``."""
    from .encoder import FeatureScaler, ReferenceStructure

    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path} is not a network checkpoint")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape))
        off += 8 * count
    if off != len(data):
        raise ValueError("checkpoint has trailing bytes")
    spec = ArchitectureSpec.from_dict(header["spec"])
    nbr = None if header["nbr"] is None else np.array(header["nbr"], dtype=np.int64)
    params = NetworkParams(spec, tuple(arrays), header["n_inputs"], nbr, header.get("meta") or {})
    scaler = None if header["scaler"] is None else FeatureScaler.from_dict(header["scaler"])
    ref = None if header["ref"] is None else ReferenceStructure.from_dict(header["ref"])
    return params, scaler, ref

"""Parameters, layers, the Adam optimizer, gradient checking and checkpoints."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, relu
from .errors import DataError, NumericError

CHECKPOINT_FORMAT = "rcone-checkpoint"
CHECKPOINT_VERSION = 1


def dense_forward(W, b, x):
    """y = W x + b for a single vector or a batch of row vectors."""
    W, b, x = np.asarray(W, float), np.asarray(b, float), np.asarray(x, float)
    if W.ndim != 2 or b.shape != (W.shape[0],) or x.shape[-1] != W.shape[1]:
        raise ValueError(f"shape mismatch: W{W.shape} b{b.shape} x{x.shape}")
    return x @ W.T + b


def dense_backward(W, x, grad_y):
    """Return (dW, db, dx) for dense_forward given dL/dy."""
    W, x, grad_y = np.asarray(W, float), np.asarray(x, float), np.asarray(grad_y, float)
    x2 = np.atleast_2d(x)
    g2 = np.atleast_2d(grad_y)
    dW = g2.T @ x2
    db = g2.sum(axis=0)
    dx = (g2 @ W).reshape(x.shape)
    return dW, db, dx


class ParamStore:
    """Named trainable tensors. Insertion order is kept but never relied on."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self.names())

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        return [(n, self._params[n]) for n in self.names()]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grad(self, name):
        t = self._params[name]
        return np.zeros_like(t.data) if t.grad is None else t.grad

    def state(self):
        return {n: t.data.copy() for n, t in self.items()}

    def load_state(self, state, strict=True):
        missing = set(self._params) - set(state)
        if strict and missing:
            raise DataError(f"checkpoint lacks parameters: {sorted(missing)}")
        for n, arr in state.items():
            if n not in self._params:
                if strict:
                    raise DataError(f"unexpected parameter {n!r} in checkpoint")
                continue
            t = self._params[n]
            if t.data.shape != arr.shape:
                raise DataError(f"shape mismatch for {n}: {t.data.shape} vs {arr.shape}")
            t.data = np.array(arr, dtype=np.float64)

    def n_values(self):
        return int(sum(t.data.size for t in self._params.values()))


def uniform_fan_in(rng, n_out, n_in):
    bound = 1.0 / np.sqrt(n_in)
    return rng.uniform(-bound, bound, size=(n_out, n_in))


class Dense:
    def __init__(self, store, name, n_in, n_out, rng, bias=True):
        self.W = store.add(f"{name}.W", uniform_fan_in(rng, n_out, n_in))
        self.b = store.add(f"{name}.b", uniform_fan_in(rng, n_out, n_in)[:, 0]) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Dense expects last dim {self.n_in}, got {x.shape}")
        y = x @ self.W.T
        return y if self.b is None else y + self.b


class MLP:
    """Two dense layers with a ReLU in between."""

    def __init__(self, store, name, n_in, n_hidden, n_out, rng):
        self.l1 = Dense(store, f"{name}.0", n_in, n_hidden, rng)
        self.l2 = Dense(store, f"{name}.1", n_hidden, n_out, rng)

    def __call__(self, x):
        return self.l2(relu(self.l1(x)))


class LayerNorm:
    def __init__(self, store, name, dim, eps=1e-5):
        self.gain = store.add(f"{name}.gain", np.ones(dim))
        self.bias = store.add(f"{name}.bias", np.zeros(dim))
        self.eps = eps

    def __call__(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / ((var + self.eps) ** 0.5) * self.gain + self.bias


@dataclass
class OptimizerConfig:
    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0

    def validate(self):
        errs = []
        if self.algorithm != "adam":
            errs.append(f"optimizer must be 'adam', got {self.algorithm!r}")
        if not self.lr > 0:
            errs.append(f"lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errs.append("betas must lie in [0, 1)")
        if not self.eps > 0:
            errs.append("eps must be > 0")
        if self.clip_norm is not None and not self.clip_norm > 0:
            errs.append("clip_norm must be > 0 (or None)")
        return errs


class Adam:
    """Adam with bias correction and global-norm gradient clipping."""

    def __init__(self, store, cfg=None):
        self.store = store
        self.cfg = cfg or OptimizerConfig()
        errs = self.cfg.validate()
        if errs:
            raise ValueError("; ".join(errs))
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in store.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in store.items()}

    def global_norm(self):
        sq = 0.0
        for n in self.store.names():
            g = self.store.grad(n)
            sq += float(np.sum(g * g))
        return float(np.sqrt(sq))

    def step(self):
        cfg = self.cfg
        norm = self.global_norm()
        if not np.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        scale = 1.0
        if cfg.clip_norm is not None and norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for n, p in self.store.items():
            g = self.store.grad(n) * scale
            m = self.m[n] = cfg.beta1 * self.m[n] + (1 - cfg.beta1) * g
            v = self.v[n] = cfg.beta2 * self.v[n] + (1 - cfg.beta2) * g * g
            p.data = p.data - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        return norm

    def state(self):
        out = {f"adam.m/{n}": a.copy() for n, a in self.m.items()}
        out.update({f"adam.v/{n}": a.copy() for n, a in self.v.items()})
        out["adam.t"] = np.array([float(self.t)])
        return out

    def load_state(self, state):
        for n in self.m:
            self.m[n] = np.array(state[f"adam.m/{n}"], dtype=np.float64)
            self.v[n] = np.array(state[f"adam.v/{n}"], dtype=np.float64)
        self.t = int(state["adam.t"][0])


def adam_step(store, opt):
    """Apply one update from the gradients currently held by ``store``."""
    return opt.step()


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_param: dict = field(default_factory=dict)
    worst: tuple = ()
    n_coords: int = 0

    def passed(self, tol):
        return self.max_rel_err < tol


def grad_check(loss_fn, store, names=None, h=1e-5, max_coords=12, seed=0, floor=1e-6,
               analytic=None):
    """Compare backprop gradients with central differences.

    ``loss_fn()`` must rebuild the graph from the current parameter values and
    return a scalar Tensor. Relative error per coordinate is
    |a - n| / max(|a|, |n|, floor); ``floor`` keeps coordinates whose true
    gradient is ~0 from being judged on round-off alone. Up to ``max_coords``
    coordinates are sampled per parameter.
    """
    rng = np.random.default_rng(seed)
    names = store.names() if names is None else list(names)
    store.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss in grad_check")
    loss.backward()
    grads = {n: store.grad(n).copy() for n in names}
    if analytic is not None:
        grads.update(analytic(grads))
    report = GradCheckReport(0.0)
    for n in names:
        p = store[n]
        flat = p.data.reshape(-1)
        k = min(max_coords, flat.size)
        idxs = rng.choice(flat.size, size=k, replace=False)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn().data)
            flat[i] = orig - h
            lm = float(loss_fn().data)
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            ana = grads[n].reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            if not np.isfinite(err):
                raise NumericError(f"non-finite finite difference for {n}[{i}]")
            if err > worst:
                worst = err
            if err > report.max_rel_err:
                report.max_rel_err = err
                report.worst = (n, int(i), float(ana), float(num))
            report.n_coords += 1
        report.per_param[n] = worst
    store.zero_grad()
    return report


def _safe_file(i):
    return f"t{i:05d}.bin"


def save_checkpoint(path, tensors, meta=None):
    """Write ``tensors`` (name -> float64 array) as manifest.json + one blob each."""
    os.makedirs(path, exist_ok=True)
    entries = []
    for i, name in enumerate(sorted(tensors)):
        arr = np.asarray(tensors[name], dtype="<f8")  # keeps 0-d shapes, unlike ascontiguousarray
        fname = _safe_file(i)
        with open(os.path.join(path, fname), "wb") as fh:
            fh.write(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "file": fname})
    manifest = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
                "meta": meta or {}, "tensors": entries}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint manifest {mpath}: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{mpath} is not an rcone checkpoint")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('version')}")
    tensors = {}
    for e in manifest["tensors"]:
        with open(os.path.join(path, e["file"]), "rb") as fh:
            buf = fh.read()
        arr = np.frombuffer(buf, dtype=e["dtype"]).astype(np.float64)
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if arr.size != n:
            raise DataError(f"tensor {e['name']} has {arr.size} values, expected {n}")
        tensors[e["name"]] = arr.reshape(tuple(e["shape"]))
    return tensors, manifest.get("meta", {})

"""Losses, filtered negative sampling and the optimisation loop."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, NumericError
from .kernels import MODE_ANSWER, MODE_CANDIDATE
from .model import query_weights
from .nn import Adam, OptimizerConfig, save_checkpoint
from .operators import dnf_distance


@dataclass
class LossConfig:
    gamma: float = 0.375 * math.pi
    k: int = 8
    lambda_l1: float = 1.0     # sub-entity term
    lambda_l2: float = 0.005   # candidate term
    mm_negatives: str = "images"

    def validate(self):
        errs = []
        if not self.gamma > 0:
            errs.append("margin gamma must be > 0")
        if self.k < 1:
            errs.append("negatives k must be >= 1")
        if self.lambda_l1 < 0 or self.lambda_l2 < 0:
            errs.append("loss weights must be >= 0")
        if self.mm_negatives not in ("images", "all"):
            errs.append("mm_negatives must be 'images' or 'all'")
        return errs


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 128
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    log_every: int = 50
    checkpoint_every: int = 0

    def validate(self):
        errs = []
        if self.steps < 0:
            errs.append("steps must be >= 0")
        if self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        return errs + self.loss.validate() + self.optimizer.validate()


def negative_sampling_loss(d_pos, d_neg, gamma, mask=None):
    """-log sig(gamma - d_pos) - (1/k) sum log sig(d_neg - gamma), averaged over rows.

    ``d_pos`` has shape (n,), ``d_neg`` (n, k); scalars and 1-d negatives are
    promoted to a single row. ``mask`` zeroes unavailable negatives.
    """
    d_pos, d_neg = ad.as_tensor(d_pos), ad.as_tensor(d_neg)
    if not (np.isfinite(d_pos.data).all() and np.isfinite(d_neg.data).all()):
        raise NumericError("non-finite distance in loss")
    if d_pos.ndim == 0:
        d_pos = d_pos.reshape(1)
        d_neg = d_neg.reshape(1, -1)
    if d_neg.shape[-1] < 1:
        raise ValueError("need at least one negative")
    k = d_neg.shape[-1]
    neg = ad.log_sigmoid(d_neg - gamma)
    if mask is not None:
        neg = neg * np.asarray(mask, dtype=np.float64)
    per = -ad.log_sigmoid(gamma - d_pos) - neg.sum(axis=-1) * (1.0 / k)
    return per.mean()


def _rows(cones, rows):
    return [type(c)(c.ax[rows], c.ri[rows], c.fu[rows]) for c in cones]


def _expand(cones):
    return [type(c)(*(x.reshape(x.shape[0], 1, x.shape[1]) for x in c)) for c in cones]


def _sample(pool, k, rng):
    if len(pool) == 0:
        return np.zeros(k, dtype=np.int64), np.zeros(k)
    return np.asarray(pool)[rng.integers(len(pool), size=k)], np.ones(k)


@dataclass
class LossParts:
    total: Tensor
    L_c: float
    L_mm: float
    L_se: float
    n_c: int
    n_mm: int
    n_se: int
    negatives: dict = field(default_factory=dict)


def total_loss(model, records, rng, cfg=None):
    """L = L_c + lambda_l1 L_se + lambda_l2 L_mm over a batch of query records.

    Positives are drawn one per query and class; negatives are filtered
    against the query's full answer set. Classes without positives
    contribute 0.
    """
    cfg = cfg or LossConfig()
    eng = model.engine
    eidx = eng.entity_index
    n_ent = len(eng.entities)
    image_set = set(model.images)
    terms = {"c": [], "mm": [], "se": []}
    negs_seen = {"c": [], "mm": [], "se": []}
    model.begin_step()
    sub_tables = {}

    for rows, cones in model.encode_groups(records):
        c_rows, c_pos, c_neg, c_mask, c_w = [], [], [], [], []
        m_rows, m_pos, m_neg, m_mask = [], [], [], []
        s_rows, s_pos, s_neg, s_mask = [], [], [], []
        for j, i in enumerate(rows):
            rec = records[i]
            t2 = rec["answers_type2"]
            t1 = rec["answers_type1"]
            cands = sorted({p["candidate"] for p in t1})
            if t2:
                excl = {eidx[a] for a in t2} | {eidx[c] for c in cands}
                pool = np.setdiff1d(np.arange(n_ent), np.fromiter(excl, dtype=np.int64))
                idx, mask = _sample(pool, cfg.k, rng)
                c_rows.append(j)
                c_pos.append(eidx[t2[int(rng.integers(len(t2)))]])
                c_neg.append(idx)
                c_mask.append(mask)
                c_w.append(query_weights(rec))
                negs_seen["c"].append((i, [eng.entities[x] for x, m in zip(idx, mask) if m]))
            if t1:
                cand = cands[int(rng.integers(len(cands)))]
                universe = model.images if cfg.mm_negatives == "images" else eng.entities
                pool = np.array([eidx[e] for e in universe if e not in set(cands)], dtype=np.int64)
                idx, mask = _sample(pool, cfg.k, rng)
                m_rows.append(j)
                m_pos.append(eidx[cand])
                m_neg.append(idx)
                m_mask.append(mask)
                negs_seen["mm"].append((i, [eng.entities[x] for x, m in zip(idx, mask) if m]))
                if cand not in sub_tables:
                    sub_tables[cand] = model.sub_axes(cand)
                ids = sub_tables[cand][0]
                answers = {p["sub"] for p in t1 if p["candidate"] == cand}
                pos_subs = sorted(answers)
                pool = np.array([k for k, s in enumerate(ids) if s not in answers], dtype=np.int64)
                idx, mask = _sample(pool, cfg.k, rng)
                s_rows.append((j, cand))
                s_pos.append(ids.index(pos_subs[int(rng.integers(len(pos_subs)))]))
                s_neg.append(idx)
                s_mask.append(mask)
                negs_seen["se"].append((i, [ids[x] for x, m in zip(idx, mask) if m]))

        if c_rows:
            sel = _rows(cones, np.array(c_rows))
            w = np.array(c_w)
            pos = dnf_distance(eng.entity_ax[np.array(c_pos)], sel, MODE_ANSWER, w[:, 0], w[:, 1])
            neg = dnf_distance(eng.entity_ax[np.array(c_neg)], _expand(sel), MODE_ANSWER,
                               w[:, :1], w[:, 1:])
            terms["c"].append((pos, neg, np.array(c_mask)))
        if m_rows:
            sel = _rows(cones, np.array(m_rows))
            l1, l2 = 0.9, 0.02
            pos = dnf_distance(eng.entity_ax[np.array(m_pos)], sel, MODE_CANDIDATE, l1, l2)
            neg = dnf_distance(eng.entity_ax[np.array(m_neg)], _expand(sel), MODE_CANDIDATE, l1, l2)
            terms["mm"].append((pos, neg, np.array(m_mask)))
        if s_rows:
            sel = _rows(cones, np.array([j for j, _ in s_rows]))
            pos_ax = ad.stack([sub_tables[c][1][p] for (_, c), p in zip(s_rows, s_pos)], axis=0)
            neg_ax = ad.stack([sub_tables[c][1][n] for (_, c), n in zip(s_rows, s_neg)], axis=0)
            l1, l2 = 0.9, 0.02
            pos = dnf_distance(pos_ax, sel, MODE_ANSWER, l1, l2)
            neg = dnf_distance(neg_ax, _expand(sel), MODE_ANSWER, l1, l2)
            terms["se"].append((pos, neg, np.array(s_mask)))
    model._step_cache = None

    def combine(parts):
        if not parts:
            return None, 0
        pos = ad.concat([p for p, _, _ in parts], axis=0)
        neg = ad.concat([n for _, n, _ in parts], axis=0)
        mask = np.concatenate([m for _, _, m in parts], axis=0)
        return negative_sampling_loss(pos, neg, cfg.gamma, mask), pos.shape[0]

    L_c, n_c = combine(terms["c"])
    L_mm, n_mm = combine(terms["mm"])
    L_se, n_se = combine(terms["se"])
    if n_c + n_mm + n_se == 0:
        raise DataError("batch has no positives in any answer class")
    total = Tensor(0.0)
    if L_c is not None:
        total = total + L_c
    if L_se is not None:
        total = total + L_se * cfg.lambda_l1
    if L_mm is not None:
        total = total + L_mm * cfg.lambda_l2
    val = lambda t: float(t.data) if t is not None else 0.0  # noqa: E731
    return LossParts(total, val(L_c), val(L_mm), val(L_se), n_c, n_mm, n_se, negs_seen)


def sample_batch(n_records, batch_size, rng):
    if n_records == 0:
        raise DataError("no training queries")
    if n_records <= batch_size:
        return np.sort(rng.permutation(n_records))
    return np.sort(rng.choice(n_records, size=batch_size, replace=False))


@dataclass
class FitResult:
    steps: int
    log: list
    optimizer: Adam


def fit(model, records, cfg=None, log_path=None, checkpoint_dir=None, optimizer=None,
        start_step=0, on_step=None):
    """Algorithm-1 loop: encode, L_c and L_mm, lazy scene path for L_se, update.

    Every step draws its batch and negatives from ``default_rng([seed, step])``,
    so a run resumed from a checkpoint continues bit-identically. A non-finite
    loss or gradient saves the last good parameters and raises NumericError.
    """
    cfg = cfg or TrainConfig()
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    opt = optimizer or Adam(model.store, cfg.optimizer)
    log = []
    log_fh = open(log_path, "a" if start_step else "w", encoding="utf-8") if log_path else None
    try:
        for step in range(start_step, cfg.steps):
            rng = np.random.default_rng([cfg.seed, step])
            batch = [records[i] for i in sample_batch(len(records), cfg.batch_size, rng)]
            model.store.zero_grad()
            good = model.tensors()
            try:
                parts = total_loss(model, batch, rng, cfg.loss)
            except NumericError:
                _abort(model, good, opt, checkpoint_dir, step, "loss")
            if not np.isfinite(parts.total.data):
                _abort(model, good, opt, checkpoint_dir, step, "loss")
            parts.total.backward()
            try:
                gnorm = opt.step()
            except NumericError:
                _abort(model, good, opt, checkpoint_dir, step, "gradient")
            entry = {"step": step + 1, "loss": float(parts.total.data), "L_c": parts.L_c,
                     "L_mm": parts.L_mm, "L_se": parts.L_se, "grad_norm": gnorm}
            log.append(entry)
            if log_fh and (cfg.log_every and ((step + 1) % cfg.log_every == 0 or step == 0)):
                log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            if on_step is not None:
                extra = on_step(step + 1, model)
                if extra and log_fh:
                    log_fh.write(json.dumps({"step": step + 1, **extra}, sort_keys=True) + "\n")
            if checkpoint_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_training_state(model, opt, Path(checkpoint_dir) / f"step-{step + 1:06d}", step + 1)
    finally:
        if log_fh:
            log_fh.close()
    return FitResult(cfg.steps, log, opt)


def _abort(model, good, opt, checkpoint_dir, step, what):
    if checkpoint_dir:
        save_checkpoint(Path(checkpoint_dir) / "last-good", good, {"step": step, "aborted": what})
    raise NumericError(f"non-finite {what} at step {step + 1}; training aborted")


def save_training_state(model, opt, path, step):
    model.save(path, extra=opt.state(), meta={"step": step})


def load_training_state(model, path, opt_cfg=None):
    tensors, meta = model.load(path)
    opt = Adam(model.store, opt_cfg)
    if "adam.t" in tensors:
        opt.load_state(tensors)
    return opt, int(meta.get("step", 0))

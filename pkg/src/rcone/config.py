"""Run configuration: INI files, ``--key=value`` overrides, presets and manifests."""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
import platform
from dataclasses import dataclass, field

from .errors import ConfigError
from .kg import SynthConfig
from .model import ModelConfig
from .nn import OptimizerConfig
from .query import STRUCTURES
from .querygen import DatasetConfig, LinkConfig, preset_counts
from .subentity import ComplExConfig
from .training import LossConfig, TrainConfig

# section -> key -> (type, default)
SCHEMA = {
    "run": {"seed": (int, 0), "workers": (int, 1)},
    "data": {
        "n_entities": (int, 50), "n_relations": (int, 8), "n_images": (int, 5),
        "sub_min": (int, 4), "sub_max": (int, 8), "density": (float, 0.02),
        "n_clusters": (int, 10), "n_sub_relations": (int, 4), "label_vocab": (int, 12),
        "linked_label_fraction": (float, 0.5),
    },
    "link": {
        "threshold": (float, 0.9), "cap": (int, 100), "min_links": (int, 1),
        "complex_steps": (int, 300), "complex_lr": (float, 0.05),
    },
    "queries": {
        "counts": (str, "fb15k-1000"), "type1_fraction": (float, 0.30),
        "image_fraction": (float, 0.05), "holdout_valid": (float, 0.05),
        "holdout_test": (float, 0.05), "link_holdout_valid": (float, -1.0),
        "link_holdout_test": (float, -1.0), "max_retries": (int, 100),
    },
    "model": {
        "d": (int, 24), "d_c": (int, 8), "heads": (int, 4), "K": (int, 1),
        "lambda_p1": (float, 1.0), "lambda_p2": (float, 1.0), "lambda_p3": (float, 1.0),
        "scene_complex_steps": (int, 200), "tau_cand": (float, math.inf),
        "proj_hidden": (int, 0),
    },
    "loss": {
        "gamma": (float, 0.375 * math.pi), "k": (int, 8), "lambda_l1": (float, 1.0),
        "lambda_l2": (float, 0.005), "mm_negatives": (str, "images"),
    },
    "train": {
        "steps": (int, 2000), "batch_size": (int, 128), "lr": (float, 1e-3),
        "beta1": (float, 0.9), "beta2": (float, 0.999), "eps": (float, 1e-8),
        "clip_norm": (float, 5.0), "log_every": (int, 50), "checkpoint_every": (int, 0),
        "valid_every": (int, 0),
    },
    "eval": {"filtered": (bool, True), "split": (str, "test")},
}

PRESETS = {
    # hyper-parameters reported for the multi-modal FB15k runs
    "paper-fb15k": {
        "model.d": "2400", "model.K": "1", "loss.lambda_l1": "1", "loss.lambda_l2": "0.005",
        "link.cap": "100", "queries.type1_fraction": "0.30", "queries.image_fraction": "0.05",
        "queries.counts": "fb15k-1000",
    },
    # the desk-scale smoke run
    "smoke": {
        "data.linked_label_fraction": "1.0", "queries.image_fraction": "1.0",
        "data.density": "0.06", "link.complex_steps": "1000",
        "queries.counts": "train=1p:all,2i:200;test=1p:all,2i:10",
        "queries.link_holdout_valid": "0.1", "queries.link_holdout_test": "0.4",
        "model.proj_hidden": "256", "loss.gamma": "3.0", "loss.lambda_l2": "1.0",
        "train.lr": "0.003", "train.steps": "2000",
    },
}


def _parse(typ, raw, where):
    try:
        if typ is bool:
            v = str(raw).strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is float and str(raw).strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        return typ(raw)
    except (TypeError, ValueError):
        raise ValueError(f"{where}: cannot parse {raw!r} as {typ.__name__}") from None


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)  # "section.key" -> typed value

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name):
        return {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith(name + ".")}

    def to_json(self):
        return {k: (str(v) if isinstance(v, float) and not math.isfinite(v) else v)
                for k, v in sorted(self.values.items())}

    def hash(self):
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- typed views for each module -------------------------------------------
    def synth(self):
        return SynthConfig(**self.section("data"))

    def link(self):
        s = self.section("link")
        return LinkConfig(s["threshold"], s["cap"], s["min_links"],
                          ComplExConfig(d_c=self["model.d_c"], steps=s["complex_steps"],
                                        lr=s["complex_lr"]))

    def dataset(self, structure=None, count=None):
        s = self.section("queries")
        counts = ({"train": {structure: count}} if structure is not None
                  else parse_counts(s["counts"]))
        lh = (s["link_holdout_valid"], s["link_holdout_test"])
        return DatasetConfig(counts, s["type1_fraction"], s["image_fraction"],
                             (s["holdout_valid"], s["holdout_test"]),
                             None if min(lh) < 0 else lh, s["max_retries"], self["run.seed"])

    def model(self):
        s = self.section("model")
        return ModelConfig(s["d"], s["d_c"], s["heads"], s["K"],
                           (s["lambda_p1"], s["lambda_p2"], s["lambda_p3"]),
                           s["scene_complex_steps"], s["tau_cand"], s["proj_hidden"])

    def train(self):
        s = self.section("train")
        opt = OptimizerConfig("adam", s["lr"], s["beta1"], s["beta2"], s["eps"], s["clip_norm"])
        return TrainConfig(s["steps"], s["batch_size"], self["run.seed"], LossConfig(**self.section("loss")),
                           opt, s["log_every"], s["checkpoint_every"])

    def validate(self):
        errs = []
        if self["run.workers"] < 1:
            errs.append("run.workers must be >= 1")
        errs += [f"data: {e}" for e in self.synth().validate()]
        errs += [f"link: {e}" for e in self.link().validate()]
        try:
            errs += [f"queries: {e}" for e in self.dataset().validate()]
        except ValueError as exc:
            errs.append(f"queries.counts: {exc}")
        errs += [f"model: {e}" for e in self.model().validate()]
        errs += [f"train: {e}" for e in self.train().validate()]
        if self["eval.split"] not in ("train", "valid", "test"):
            errs.append("eval.split must be train, valid or test")
        return errs


def parse_counts(spec):
    """``fb15k-1000`` or ``train=1p:50,2i:20;test=1p:all`` -> split -> structure -> n."""
    spec = spec.strip()
    if "=" not in spec:
        return preset_counts(spec) if spec else {}
    out = {}
    for part in spec.split(";"):
        if not part.strip():
            continue
        split, _, body = part.partition("=")
        per = {}
        for item in body.split(","):
            s, _, n = item.strip().partition(":")
            if s not in STRUCTURES:
                raise ValueError(f"unknown structure {s!r}")
            per[s] = None if n.strip() == "all" else int(n)
        out[split.strip()] = per
    return out


def load_config(path=None, overrides=(), preset=None, env=None):
    """Defaults <- preset <- file <- ``--key=value`` overrides <- RCONE_SEED.

    Every problem found is collected and raised together as ConfigError.
    """
    env = os.environ if env is None else env
    raw, errs = {}, []
    if preset is not None:
        if preset not in PRESETS:
            errs.append(f"unknown preset {preset!r} (known: {', '.join(sorted(PRESETS))})")
        else:
            raw.update(PRESETS[preset])
    if path is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
        for sec in cp.sections():
            if sec not in SCHEMA:
                errs.append(f"{path}: unknown section [{sec}]")
                continue
            for k, v in cp.items(sec):
                raw[f"{sec}.{k}"] = v
    for ov in overrides:
        key, sep, val = ov.partition("=")
        key = key.lstrip("-")
        if not sep:
            errs.append(f"override {ov!r} must look like --key=value")
            continue
        full = _resolve(key)
        if isinstance(full, list):
            errs.append(f"override --{key}: " + ("unknown key" if not full else
                        f"ambiguous, use one of {', '.join(full)}"))
            continue
        raw[full] = val
    if "RCONE_SEED" in env:
        raw["run.seed"] = env["RCONE_SEED"]

    values = {}
    for sec, keys in SCHEMA.items():
        for k, (typ, default) in keys.items():
            values[f"{sec}.{k}"] = default
    for key, val in raw.items():
        sec, _, k = key.partition(".")
        if sec not in SCHEMA or k not in SCHEMA[sec]:
            errs.append(f"unknown key {key}")
            continue
        try:
            values[key] = _parse(SCHEMA[sec][k][0], val, key)
        except ValueError as exc:
            errs.append(str(exc))
    if errs:
        raise ConfigError(errs)
    cfg = RunConfig(values)
    errs = cfg.validate()
    if errs:
        raise ConfigError(errs)
    return cfg


def _resolve(key):
    if "." in key:
        sec, _, k = key.partition(".")
        return key if sec in SCHEMA and k in SCHEMA[sec] else []
    hits = [f"{sec}.{key}" for sec, keys in SCHEMA.items() if key in keys]
    return hits[0] if len(hits) == 1 else hits


def versions():
    import numpy
    import scipy
    from . import __version__
    from .kernels import BACKEND
    return {"rcone": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernels": BACKEND}


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, cfg, outputs=(), extra=None):
    """manifest.json: command, resolved config and its hash, seed, versions, output digests."""
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    for p in sorted(outputs):
        full = os.path.join(out_dir, p)
        if os.path.isdir(full):
            for root, _, names in sorted(os.walk(full)):
                for n in sorted(names):
                    fp = os.path.join(root, n)
                    files[os.path.relpath(fp, out_dir)] = file_digest(fp)
        elif os.path.exists(full):
            files[p] = file_digest(full)
    man = {"command": command, "config": cfg.to_json(), "config_hash": cfg.hash(),
           "seed": cfg["run.seed"], "versions": versions(), "outputs": files}
    man.update(extra or {})
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(man, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return man

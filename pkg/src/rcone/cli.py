"""``rcone`` command line: synth, gen-queries, train, eval, fidelity, gradcheck, inspect."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import PRESETS, load_config, write_manifest
from .errors import ConfigError, DataError, NumericError, RConeError

COMMANDS = ("synth", "gen-queries", "train", "eval", "fidelity", "gradcheck", "inspect")


def _parser():
    p = argparse.ArgumentParser(
        prog="rcone",
        description="Rough-cone embeddings for logical queries over multi-modal KGs. "
                    "Any config key can be overridden with --key=value or --section.key=value.")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named hyper-parameter preset")
    p.add_argument("--seed", type=int, help="shorthand for --run.seed")
    p.add_argument("--workers", type=int, help="shorthand for --run.workers (default 1)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("synth", help="write a synthetic MMKG with scene graphs")
    s.add_argument("--out", required=True)

    s = sub.add_parser("gen-queries", help="link scene graphs and generate query splits")
    s.add_argument("--data", help="MMKG directory (synthesized from [data] when omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--structure", help="generate only this structure (train split)")
    s.add_argument("--count", type=int, help="number of queries for --structure")

    s = sub.add_parser("train", help="fit the model on the train split")
    s.add_argument("--data", required=False)
    s.add_argument("--queries", required=False)
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint directory to continue from")
    s.add_argument("--dry-run", action="store_true",
                   help="validate the config, write the manifest and stop")

    for name, helptext in (("eval", "filtered MRR / HITS@k report"),
                           ("fidelity", "fuzzy-region containment analysis")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--data", required=True)
        s.add_argument("--queries", required=True)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--out", required=True)
        if name == "eval":
            s.add_argument("--split", choices=("train", "valid", "test"))
        else:
            s.add_argument("--n", type=int, default=8000)
            s.add_argument("--relation")

    s = sub.add_parser("gradcheck", help="backprop vs central differences on every path")
    s.add_argument("--out")
    s.add_argument("--tol", type=float, default=1e-4)

    s = sub.add_parser("inspect", help="summarize an MMKG, dataset, query file or checkpoint")
    s.add_argument("path")
    return p


def _split_overrides(argv):
    """Separate ``--key=value`` config overrides from the regular arguments."""
    known = {"--config", "--preset", "--seed", "--workers", "--out", "--data", "--queries",
             "--structure", "--count", "--resume", "--checkpoint", "--split", "--n",
             "--relation", "--tol"}
    args, overrides = [], []
    for a in argv:
        if a.startswith("--") and "=" in a and a.split("=", 1)[0] not in known:
            overrides.append(a)
        else:
            args.append(a)
    return args, overrides


def _config(ns, overrides):
    ov = list(overrides)
    if ns.seed is not None:
        ov.append(f"--run.seed={ns.seed}")
    if ns.workers is not None:
        ov.append(f"--run.workers={ns.workers}")
    return load_config(ns.config, ov, ns.preset)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args, overrides = _split_overrides(argv)
    ns = _parser().parse_args(args)
    try:
        cfg = _config(ns, overrides)
        return HANDLERS[ns.command](ns, cfg) or 0
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return exc.exit_code
    except RConeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"DataError: {exc}", file=sys.stderr)
        return DataError.exit_code


# -- handlers ----------------------------------------------------------------------

def _synth(ns, cfg):
    from .kg import save_mmkg, synth_mmkg
    g = synth_mmkg(cfg.synth(), cfg["run.seed"])
    save_mmkg(g, ns.out)
    write_manifest(ns.out, "synth", cfg, ["triples.tsv", "modality.tsv", "relations.tsv",
                                          "scene_graphs"])
    print(f"wrote {len(g.entities)} entities, {len(g.triples)} triples, "
          f"{len(g.scene_graphs)} scene graphs to {ns.out}")


def _load_mmkg(path, cfg):
    from .kg import load_mmkg, synth_mmkg
    if path is None:
        return synth_mmkg(cfg.synth(), cfg["run.seed"])
    return load_mmkg(path)


def _gen_queries(ns, cfg):
    from .querygen import generate_dataset, joint_link_model, link_scene_graphs, write_dataset
    if (ns.structure is None) != (ns.count is None):
        raise ConfigError(["--structure and --count go together"])
    dcfg = cfg.dataset(ns.structure, ns.count)
    errs = dcfg.validate()
    if errs:
        raise ConfigError(errs)
    mmkg = _load_mmkg(ns.data, cfg)
    link = cfg.link()
    g = link_scene_graphs(mmkg, joint_link_model(mmkg, link, cfg["run.seed"]), link)
    ds = generate_dataset(g, dcfg)
    write_dataset(ds, ns.out)
    write_manifest(ns.out, "gen-queries", cfg,
                   ["train.jsonl", "valid.jsonl", "test.jsonl", "graph.json", "stats.json"],
                   {"structure": ns.structure, "count": ns.count})
    for split, recs in ds.queries.items():
        print(f"{split}: {len(recs)} queries")


def _load_model(ns, cfg, split_graph="train"):
    from .model import RConeModel
    from .querygen import read_dataset
    if ns.data is None or ns.queries is None:
        raise ConfigError(["--data and --queries are required"])
    mmkg = _load_mmkg(ns.data, cfg)
    ds = read_dataset(ns.queries, mmkg)
    if split_graph not in ds.graphs:
        raise DataError(f"dataset has no {split_graph} graph")
    return ds, RConeModel(ds.graphs[split_graph], cfg.model(), cfg["run.seed"])


def _train(ns, cfg):
    from .evaluation import evaluate_split
    from .training import fit, load_training_state, save_training_state
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "train", cfg)
    if ns.dry_run:
        print(json.dumps(cfg.to_json(), sort_keys=True, indent=1))
        return 0
    ds, model = _load_model(ns, cfg)
    tcfg = cfg.train()
    opt, start = None, 0
    if ns.resume:
        opt, start = load_training_state(model, ns.resume, tcfg.optimizer)
    valid = ds.queries.get("valid", [])
    every = cfg["train.valid_every"]

    def on_step(step, m):
        if not (every and valid and step % every == 0):
            return None
        rep = evaluate_split(m.scorer(), valid, cfg["eval.filtered"])
        return {"valid_mrr": rep.average("typeII"),
                "valid_candidate_mrr": rep.average("typeI-candidate")}

    res = fit(model, ds.queries["train"], tcfg, out / "metrics.jsonl", out / "checkpoints",
              opt, start, on_step)
    save_training_state(model, res.optimizer, out / "model", tcfg.steps)
    write_manifest(out, "train", cfg, ["metrics.jsonl", "model", "checkpoints"])
    last = res.log[-1] if res.log else {}
    print(f"trained {tcfg.steps - start} steps; final loss {last.get('loss', float('nan')):.4f}")


def _eval(ns, cfg):
    from .evaluation import evaluate_split
    split = ns.split or cfg["eval.split"]
    ds, model = _load_model(ns, cfg)
    model.load(ns.checkpoint)
    rep = evaluate_split(model.scorer(), ds.queries.get(split, []), cfg["eval.filtered"])
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.dumps() + "\n", encoding="utf-8")
    (out / "report.csv").write_text(rep.csv(), encoding="utf-8")
    (out / "report.txt").write_text(rep.table() + "\n", encoding="utf-8")
    write_manifest(out, "eval", cfg, ["report.json", "report.csv", "report.txt"],
                   {"split": split, "checkpoint": os.path.basename(os.path.normpath(ns.checkpoint))})
    print(rep.table())


def _fidelity(ns, cfg):
    from .evaluation import fidelity_analysis
    _, model = _load_model(ns, cfg)
    model.load(ns.checkpoint)
    eng = model.engine
    rep = fidelity_analysis(eng.project_cones, model.graph.mmkg.relations, ns.n, cfg["model.d"],
                            cfg["run.seed"], ns.relation, workers=cfg["run.workers"])
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "fidelity.json").write_text(json.dumps(rep.to_json(), sort_keys=True, indent=1) + "\n",
                                       encoding="utf-8")
    write_manifest(out, "fidelity", cfg, ["fidelity.json"])
    print(json.dumps(rep.to_json(), sort_keys=True))


def _gradcheck(ns, cfg):
    from .diagnostics import gradcheck_suite
    res = gradcheck_suite(cfg["run.seed"])
    worst = max(r.max_rel_err for r in res.values())
    lines = {k: {"max_rel_err": r.max_rel_err, "coords": r.n_coords, "worst": list(r.worst)}
             for k, r in res.items()}
    for k, v in lines.items():
        print(f"{k:13s} max rel err {v['max_rel_err']:.3e} over {v['coords']} coords")
    if ns.out:
        out = Path(ns.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(json.dumps(lines, sort_keys=True, indent=1) + "\n",
                                            encoding="utf-8")
        write_manifest(out, "gradcheck", cfg, ["gradcheck.json"])
    if not worst < ns.tol:
        raise NumericError(f"max relative error {worst:.3e} >= {ns.tol:g}")
    print(f"ok: max rel err {worst:.3e} < {ns.tol:g}")


def _inspect(ns, cfg):
    print(json.dumps(inspect_path(ns.path), sort_keys=True, indent=1))


def inspect_path(path):
    from .kg import load_mmkg
    from .nn import load_checkpoint
    from .querygen import _stats, read_queries
    p = Path(path)
    if not p.exists():
        raise DataError(f"{path} does not exist")
    if p.is_file() and p.suffix == ".jsonl":
        return {"kind": "queries", **_stats(read_queries(p))}
    if (p / "triples.tsv").exists():
        g = load_mmkg(p)
        return {"kind": "mmkg", "entities": len(g.entities), "relations": len(g.relations),
                "triples": len(g.triples), "images": len(g.image_entities),
                "sub_entities": len(g.sub_entities())}
    if (p / "graph.json").exists():
        stats = json.loads((p / "stats.json").read_text()) if (p / "stats.json").exists() else {}
        return {"kind": "dataset", **stats}
    if (p / "manifest.json").exists():
        man = json.loads((p / "manifest.json").read_text())
        if "tensors" in man:
            tensors, meta = load_checkpoint(p)
            return {"kind": "checkpoint", "meta": meta,
                    "tensors": {k: list(v.shape) for k, v in sorted(tensors.items())},
                    "n_values": int(sum(v.size for v in tensors.values()))}
        return {"kind": "run", **man}
    raise DataError(f"do not know how to inspect {path}")


HANDLERS = {"synth": _synth, "gen-queries": _gen_queries, "train": _train, "eval": _eval,
            "fidelity": _fidelity, "gradcheck": _gradcheck, "inspect": _inspect}


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``htgn {generate,build,sweep,train,eval,report}``."""

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, htsbm_params, load_config, load_dataset
from .graph import BIPARTITE, EventFormatError, save_events
from .htsbm import duration_sweep, write_planted
from .hyperedges import HyperedgeBuilder, RegistryError, memory_footprint
from .model import HTGN
from .train import Trainer, TrainingError, fit, write_metrics

log = logging.getLogger("htgn")

SPEARMAN_GATE = -0.8


def run_id(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha1(blob).hexdigest()[:12]


def _prepare(cfg: RunConfig) -> Path:
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.yaml")
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_generate(cfg: RunConfig, args) -> int:
    if cfg.data.htsbm is None:
        raise ConfigError("generate needs a data.htsbm section")
    if cfg.data.seed is None:
        raise ConfigError("generate needs data.seed")
    out = _prepare(cfg)
    g, planted = load_dataset(cfg)
    save_events(g, out / "events.csv")
    write_planted(planted, out / "planted.jsonl")
    _write_json(out / "htsbm_params.json", htsbm_params(cfg.data.htsbm).to_dict())
    print(f"wrote {len(g)} events and {len(planted)} planted hyperedges to {out}")
    return 0


def _builder(cfg: RunConfig, g, debug: bool = False) -> HyperedgeBuilder:
    b = cfg.builder
    tp = float("inf") if b.t_prime is None else float(b.t_prime)
    side_b = g.side_b_nodes() if cfg.data.kind == BIPARTITE else None
    return HyperedgeBuilder(cfg.data.kind, g.num_nodes, b=b.b, window=b.window, capacity=b.capacity,
                            t_prime=tp, cliques=b.cliques, side_b_nodes=side_b, debug=debug)


def cmd_build(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    g, _ = load_dataset(cfg)
    builder = _builder(cfg, g, args.debug)
    builder.run(g)
    reg = builder.registry
    reg.check_invariants()
    reg.dump(out / "hyperedges.jsonl")
    builder.write_merge_log(out / "merges.jsonl")
    peak, n, ratio = memory_footprint(reg, g.num_nodes)
    sizes = {}
    for he in reg.live.values():
        sizes[len(he.members)] = sizes.get(len(he.members), 0) + 1
    _write_json(out / "build.json", {"events": len(g), "live": reg.live_count(), "peak_slots": peak,
                                     "num_nodes": n, "ratio": ratio,
                                     "sizes": {str(k): v for k, v in sorted(sizes.items())}})
    print(f"{reg.live_count()} live hyperedges, peak slots {peak}/{n}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    if cfg.data.htsbm is None:
        raise ConfigError("sweep needs a data.htsbm section")
    out = _prepare(cfg)
    p = htsbm_params(cfg.data.htsbm)
    s = cfg.sweep
    res = duration_sweep(p, s.durations, s.seeds, s.mode, s.seed0)
    res.write(out / "sweep_rows.csv", out / "sweep_summary.csv")
    passed = bool(res.spearman <= SPEARMAN_GATE)
    rho = None if math.isnan(res.spearman) else res.spearman  # keep the file strict JSON
    _write_json(out / "sweep.json", {"spearman": rho, "gate": SPEARMAN_GATE, "passed": passed,
                                     "durations": list(s.durations), "seeds": s.seeds, "mode": s.mode})
    for row in res.summary:
        print("duration %-8g jaccard %.4f +- %.4f" % (row[0], row[1], row[2]))
    print(f"spearman {res.spearman:.3f} ({'<=' if passed else '>'} {SPEARMAN_GATE})")
    return 0


def _trainer(cfg: RunConfig, g, model=None, debug: bool = False) -> Trainer:
    mcfg = cfg.model
    if g.d_e and mcfg.d_e != g.d_e:
        raise ConfigError(f"model.d_e={mcfg.d_e} but the dataset has {g.d_e} link features")
    return Trainer(g, mcfg, cfg.builder, cfg.train, model=model, debug=debug)


def cmd_train(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    g, _ = load_dataset(cfg)
    tr = _trainer(cfg, g, debug=args.debug)
    rid = run_id(cfg)
    meta = {"run_id": rid}
    tr.model.save(out / "model_init.ckpt", meta)
    res = fit(tr, wall_clock=cfg.output.wall_clock)
    write_metrics(res.rows, out / "metrics.csv")
    report = {"run_id": rid, "config": cfg.to_dict(), "epochs_run": len(res.epoch_stats),
              "best_epoch": res.best_epoch, "best_val_mrr": res.best_val_mrr}
    if res.epoch_stats:
        tr.model.save(out / "model_final.ckpt", meta)
        tr.load_params(res.best_params)
        tr.model.save(out / "model_best.ckpt", meta)
        peak, n, ratio = tr.footprint()
        report.update({"final_train_loss": res.epoch_stats[-1].loss, "peak_slots": peak, "ratio": ratio})
    _write_json(out / "report.json", report)
    print(f"run {rid}: best val MRR {res.best_val_mrr} at epoch {res.best_epoch}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    out = _prepare(cfg)
    if args.oracle:
        model = None
    else:
        if not args.checkpoint:
            raise ConfigError("eval needs --checkpoint (or --oracle)")
        ck = Path(args.checkpoint)
        if not ck.exists() or not Path(str(ck) + ".json").exists():
            raise FileNotFoundError(f"checkpoint {ck} (or its .json sidecar) not found")
        model = HTGN.load(ck)
    g, _ = load_dataset(cfg)
    if model is not None:
        cfg.model = model.cfg
    tr = _trainer(cfg, g, model, debug=args.debug)
    lo = tr.ranges[args.split][0]
    tr.roll_forward(lo)
    res = tr.evaluate(args.split, oracle=args.oracle)
    body = res.to_dict()
    body.update({"split": args.split, "checkpoint": args.checkpoint, "oracle": bool(args.oracle)})
    _write_json(out / f"eval_{args.split}.json", body)
    print(json.dumps(body, sort_keys=True))
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    out = cfg.output_dir()
    lines = [f"# run report: {out}", ""]
    found = False
    metrics = out / "metrics.csv"
    if metrics.exists():
        found = True
        with metrics.open() as fh:
            rows = list(csv.DictReader(fh))
        val = [r for r in rows if r["split"] == "val" and r["mrr"]]
        train = [r for r in rows if r["split"] == "train" and r["loss"]]
        if train:
            lines.append(f"- epochs: {train[-1]['epoch']}, last train loss {float(train[-1]['loss']):.5f}")
        if val:
            best = max(val, key=lambda r: float(r["mrr"]))
            lines.append(f"- best val MRR {float(best['mrr']):.4f} at epoch {best['epoch']}")
            lines.append(f"- peak slots {best['peak_slots']} (ratio {float(best['ratio']):.3f})")
    sweep = out / "sweep.json"
    if sweep.exists():
        found = True
        s = json.loads(sweep.read_text())
        rho = "undefined" if s["spearman"] is None else f"{s['spearman']:.3f}"
        lines.append(f"- duration sweep spearman {rho} (gate {s['gate']}, passed={s['passed']})")
    build = out / "build.json"
    if build.exists():
        found = True
        b = json.loads(build.read_text())
        lines.append(f"- build: {b['live']} live hyperedges, peak slots {b['peak_slots']}/{b['num_nodes']}")
    for ev in sorted(out.glob("eval_*.json")):
        found = True
        e = json.loads(ev.read_text())
        lines.append(f"- {e['split']} MRR {e['mrr']:.4f} over {e['n_queries']} queries")
    if not found:
        print(f"nothing to report in {out}", file=sys.stderr)
        return 1
    text = "\n".join(lines) + "\n"
    (out / "report.md").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


COMMANDS = {"generate": cmd_generate, "build": cmd_build, "sweep": cmd_sweep, "train": cmd_train,
            "eval": cmd_eval, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="htgn", description="Hypergraph temporal graph network toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="YAML or JSON run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. train.lr=1e-3 (repeatable)")
        p.add_argument("--debug", action="store_true", help="check registry invariants after every change")
        if name == "eval":
            p.add_argument("--checkpoint")
            p.add_argument("--split", choices=("val", "test"), default="test")
            p.add_argument("--oracle", action="store_true", help="score with a perfect oracle instead of a model")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, EventFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (RegistryError, TrainingError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

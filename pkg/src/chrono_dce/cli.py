"""``chrono-dce`` command line.

Subcommands write into an experiment directory whose ``experiment.json``
records every run's configuration, seeds and the sha256 of each artifact.
``report`` refuses to render if any recorded artifact is missing or altered.

Exit codes: 0 success, 2 usage or invalid input, 3 missing/corrupt artifact,
4 training diverged.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import plotting
from .model import load_checkpoint, predict_proba, save_checkpoint
from .probe import PROBE_KINDS, ProbeConfig, curves_csv_rows, probe_train
from .skeleton import (DEFAULT_GRAPH, SequenceFormatError, SyntheticSpec, env_threads, frequency_classes,
                       load_dataset, mixed_spec, reversal_pair_spec, save_dataset, synth_generate)
from .training import (FeatureConfig, TrainConfig, TrainingDiverged, ensemble_from_probs, evaluate, mix_seed,
                       model_config_for, prepare_inputs, train)

logger = logging.getLogger("chrono_dce")

EXIT_OK, EXIT_USAGE, EXIT_ARTIFACT, EXIT_DIVERGED = 0, 2, 3, 4
MANIFEST_NAME = "experiment.json"
NOISE_HEADER = ("model", "epsilon", "trial", "accuracy")


class ArtifactError(RuntimeError):
    pass


class UsageError(ValueError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- manifest


@dataclass
class ExperimentManifest:
    name: str
    runs: List[dict] = field(default_factory=list)
    version: int = 1

    @classmethod
    def load(cls, exp_dir) -> "ExperimentManifest":
        path = Path(exp_dir) / MANIFEST_NAME
        if not path.is_file():
            return cls(name=Path(exp_dir).resolve().name)
        doc = json.loads(path.read_text(encoding="utf-8"))
        return cls(name=doc["name"], runs=doc.get("runs", []), version=doc.get("version", 1))

    def save(self, exp_dir) -> Path:
        path = Path(exp_dir) / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True), encoding="utf-8")
        return path

    def record(self, exp_dir, run_id: str, command: str, config: dict, files: Sequence[Path]) -> dict:
        root = Path(exp_dir)
        artifacts = {}
        for f in files:
            rel = Path(f).resolve().relative_to(root.resolve()).as_posix()
            artifacts[rel] = sha256_file(f)
        run = {"id": run_id, "command": command, "config": config, "artifacts": artifacts}
        self.runs = [r for r in self.runs if r["id"] != run_id] + [run]
        self.save(root)
        return run

    def verify(self, exp_dir) -> None:
        root = Path(exp_dir)
        if not self.runs:
            raise ArtifactError(f"{root / MANIFEST_NAME} lists no runs")
        for run in self.runs:
            for rel, digest in run["artifacts"].items():
                path = root / rel
                if not path.is_file():
                    raise ArtifactError(f"artifact {rel} (run {run['id']}) is missing")
                if not digest:
                    raise ArtifactError(f"artifact {rel} (run {run['id']}) has no recorded hash")
                if sha256_file(path) != digest:
                    raise ArtifactError(f"artifact {rel} (run {run['id']}) does not match its recorded sha256")

    def by_command(self, command: str) -> List[dict]:
        return [r for r in self.runs if r["command"] == command]


# ---------------------------------------------------------------- helpers


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default), encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _resolve_checkpoint(ref: str, exp_dir: Optional[Path]) -> Path:
    p = Path(ref)
    candidates = [p, p.with_suffix(".json")]
    if exp_dir is not None:
        candidates += [exp_dir / ref, (exp_dir / ref).with_suffix(".json")]
    for c in candidates:
        if c.suffix == ".json" and c.is_file():
            return c
    raise ArtifactError(f"checkpoint {ref!r} not found")


def _load_split(data_dir, val_fraction: float):
    ds = load_dataset(data_dir)
    if len(ds) == 0:
        raise UsageError(f"dataset {data_dir} is empty")
    return ds, ds.split(val_fraction)


def _model_name(args) -> str:
    return args.name or f"{args.features}-{args.encoding}-crl{args.lambda_crl:g}"


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cycles = tuple(args.cycles) if args.classes != "reversal" else ()
    if args.classes == "frequency":
        spec = SyntheticSpec(frequency_classes(cycles), T=args.frames, samples_per_class=args.samples, seed=args.seed)
    elif cycles:
        spec = mixed_spec(args.pairs, cycles, args.samples, args.frames, args.seed)
    else:
        spec = reversal_pair_spec(args.pairs, args.samples, args.frames, args.seed)
    ds = synth_generate(spec)
    extra = {"synthetic": {"classes": args.classes, "pairs": args.pairs, "cycles": list(cycles),
                           "samples_per_class": args.samples, "frames": args.frames, "seed": args.seed}}
    path = save_dataset(ds, args.out, extra=extra)
    print(json.dumps({"dataset": str(args.out), "sequences": len(ds), "classes": ds.class_names,
                      "manifest_sha256": sha256_file(path)}))
    return EXIT_OK


def _train_one(args, name: str, lambda_crl: float, exp: ExperimentManifest, out: Path, ds, tr, va,
               lock: Optional[threading.Lock] = None) -> dict:
    feat = FeatureConfig(features=args.features, encoding=args.encoding, K=args.K, frames=args.frames,
                         encoding_seed=args.seed)
    tcfg = TrainConfig(lr0=args.lr, momentum=args.momentum, epochs=args.epochs, batch_size=args.batch_size,
                       seed=args.seed, lambda_crl=lambda_crl, grad_clip=args.grad_clip or None,
                       target_val_acc=args.target_acc)
    Xtr = prepare_inputs(tr, feat, DEFAULT_GRAPH)
    Xva = prepare_inputs(va, feat, DEFAULT_GRAPH)
    mcfg = model_config_for(feat, len(ds.class_names))
    model, run = train(mcfg, Xtr, tr.labels, tcfg, val=(Xva, va.labels))
    extra = {
        "name": name,
        "features": asdict(feat),
        "train": asdict(tcfg),
        "class_names": ds.class_names,
        "val_fraction": args.val_fraction,
        "data": str(Path(args.data).resolve()),
        "data_manifest_sha256": sha256_file(Path(args.data) / "manifest.json"),
    }
    ckpt = save_checkpoint(model, out / name, extra=extra)
    record = run.to_dict()
    record.update({"name": name, "features": asdict(feat), "class_names": ds.class_names})
    run_json = _write_json(out / f"{name}.run.json", record)
    conf_csv = _write_csv(out / f"{name}.confusion.csv", ["true\\pred"] + ds.class_names,
                          [[ds.class_names[i]] + row for i, row in enumerate(run.confusion)])
    with lock or contextlib.nullcontext():
        exp.record(out, name, "train", {"args": _args_dict(args), "lambda_crl": lambda_crl, "extra": extra},
                   [ckpt, ckpt.with_suffix(".bin"), run_json, conf_csv])
    summary = {"name": name, "val_accuracy": run.final_val_accuracy, "epochs_run": len(run.epochs),
               "wall_time": round(run.wall_time, 3), "params": run.param_count}
    return summary


def _args_dict(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, (tr, va) = _load_split(args.data, args.val_fraction)
    exp = ExperimentManifest.load(out)
    print(json.dumps(_train_one(args, _model_name(args), args.lambda_crl, exp, out, ds, tr, va)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Train one model per lambda value; the weighting is a free hyperparameter."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, (tr, va) = _load_split(args.data, args.val_fraction)
    exp = ExperimentManifest.load(out)
    base = args.name or f"{args.features}-{args.encoding}"
    lock = threading.Lock()

    def one(lam):
        return _train_one(args, f"{base}-crl{lam:g}", lam, exp, out, ds, tr, va, lock)

    with ThreadPoolExecutor(max_workers=env_threads()) as pool:
        summaries = list(pool.map(one, args.lambdas))
    rows = []
    for lam, s in zip(args.lambdas, summaries):
        rows.append((lam, s["name"], s["val_accuracy"]))
        print(json.dumps(s))
    table = _write_csv(out / f"{base}.sweep.csv", ("lambda_crl", "model", "val_accuracy"), rows)
    exp.record(out, f"{base}.sweep", "lambda-sweep", {"args": _args_dict(args)}, [table])
    return EXIT_OK


def _checkpoint_inputs(extra: dict, va, noise_eps: float, noise_seed: int) -> np.ndarray:
    feat = FeatureConfig(**extra["features"])
    return prepare_inputs(va, feat, DEFAULT_GRAPH, noise_eps=noise_eps, noise_seed=noise_seed)


def cmd_noise_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = ExperimentManifest.load(out)
    models = []
    for ref in args.checkpoint:
        path = _resolve_checkpoint(ref, out)
        model, extra = load_checkpoint(path)
        models.append((extra.get("name", path.stem), model, extra))
    ds, (_, va) = _load_split(args.data, models[0][2].get("val_fraction", 0.2))
    jobs = []
    for eps in args.epsilons:
        if eps < 0:
            raise UsageError(f"epsilon must be >= 0, got {eps}")
        for trial in range(args.trials if eps > 0 else 1):
            jobs.append((eps, trial, mix_seed(args.seed, trial)))

    def run(job):
        eps, trial, seed = job
        accs = []
        for name, model, extra in models:
            X = _checkpoint_inputs(extra, va, eps, seed)
            accs.append((name, evaluate(model, X, va.labels).accuracy))
        return eps, trial, accs

    with ThreadPoolExecutor(max_workers=env_threads()) as pool:
        results = list(pool.map(run, jobs))
    rows = [(name, eps, trial, acc) for eps, trial, accs in results for name, acc in accs]
    rows.sort(key=lambda r: ([m[0] for m in models].index(r[0]), r[1], r[2]))
    csv_path = _write_csv(out / f"{args.name}.csv", NOISE_HEADER, [(n, f"{e:g}", t, repr(a)) for n, e, t, a in rows])
    means: Dict[str, Dict[float, float]] = {}
    for n, e, _, a in rows:
        means.setdefault(n, {}).setdefault(e, []).append(a)
    means = {n: {e: float(np.mean(v)) for e, v in d.items()} for n, d in means.items()}
    svg = plotting.noise_curves(means, out / f"{args.name}.svg")
    summary = _write_json(out / f"{args.name}.json",
                          {"mean_accuracy": {n: {f"{e:g}": a for e, a in d.items()} for n, d in means.items()},
                           "trials": args.trials, "seed": args.seed})
    exp.record(out, args.name, "noise-bench", {"args": _args_dict(args)}, [csv_path, svg, summary])
    print(json.dumps({"csv": str(csv_path), "mean_accuracy": json.loads(summary.read_text())["mean_accuracy"]}))
    return EXIT_OK


def cmd_probe(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    exp = ExperimentManifest.load(out)
    ds, (tr, va) = _load_split(args.data, args.val_fraction)
    results, rows, curves = {}, [], {}
    for kind in args.kind:
        cfg = ProbeConfig(kind=kind, K=args.K, lr=args.lr, epochs=args.epochs, frames=args.frames, seed=args.seed,
                          include_original=args.include_original)
        _, res = probe_train(tr, va, cfg)
        results[kind] = res.summary()
        rows.extend(curves_csv_rows(res, args.sample))
        curves[kind] = res.curves[args.sample]
        logger.info("probe %s mean fraction %.4f", kind, res.mean_fraction)
    csv_path = _write_csv(out / f"{args.name}.curves.csv", ("frame", "value", "kind"),
                          [(t, repr(v), k) for t, v, k in rows])
    svg = plotting.probe_curves(curves, out / f"{args.name}.svg")
    summary = _write_json(out / f"{args.name}.json", results)
    exp.record(out, args.name, "probe", {"args": _args_dict(args)}, [csv_path, svg, summary])
    print(json.dumps({k: {"mean_fraction": v["mean_fraction"], "untrained_mean_fraction": v["untrained_mean_fraction"]}
                      for k, v in results.items()}))
    return EXIT_OK


def cmd_ensemble(args) -> int:
    out = Path(args.out) if args.out else None
    refs = [r for r in args.checkpoints.split(",") if r]
    if len(refs) < 1:
        raise UsageError("--checkpoints needs at least one entry")
    loaded = [load_checkpoint(_resolve_checkpoint(r, out)) for r in refs]
    val_fraction = loaded[0][1].get("val_fraction", 0.2)
    ds, (_, va) = _load_split(args.data, val_fraction)
    probs, individual = [], {}
    for ref, (model, extra) in zip(refs, loaded):
        p = predict_proba(model, _checkpoint_inputs(extra, va, 0.0, 0))
        probs.append(p)
        individual[extra.get("name", ref)] = ensemble_from_probs([p], va.labels).accuracy
    res = ensemble_from_probs(probs, va.labels)
    doc = {"models": list(individual), "individual": individual, "ensemble": res.accuracy,
           "per_class": res.per_class, "most_confused": res.most_confused}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        exp = ExperimentManifest.load(out)
        path = _write_json(out / f"{args.name}.json", doc)
        exp.record(out, args.name, "ensemble", {"args": _args_dict(args)}, [path])
    print(json.dumps(doc))
    return EXIT_OK


# ---------------------------------------------------------------- report


def _pct(x) -> str:
    return "n/a" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{100.0 * x:.1f}"


def _class_name(names, idx) -> str:
    return "-" if idx is None else names[idx]


def cmd_report(args) -> int:
    root = Path(args.experiment_dir)
    if not (root / MANIFEST_NAME).is_file():
        raise ArtifactError(f"no {MANIFEST_NAME} in {root}")
    exp = ExperimentManifest.load(root)
    exp.verify(root)
    fig_dir = root / "report"
    fig_dir.mkdir(exist_ok=True)
    runs = {}
    for r in exp.by_command("train"):
        rel = next(k for k in r["artifacts"] if k.endswith(".run.json"))
        runs[r["id"]] = json.loads((root / rel).read_text(encoding="utf-8"))
    lines = [f"# Experiment report: {exp.name}", ""]
    figures = []
    if runs:
        names = list(runs)
        baseline = args.baseline or next(
            (n for n in names if runs[n]["features"]["encoding"] == "none"
             and runs[n]["config"]["train"]["lambda_crl"] == 0), names[0])
        if baseline not in runs:
            raise UsageError(f"baseline {baseline!r} is not a trained run in {root}")
        base_acc = runs[baseline]["final_val_accuracy"]
        lines += ["## Models", "", f"Baseline: `{baseline}`", "",
                  "| model | features | encoding | K | lambda_crl | val acc (%) | delta (pp) | epochs |",
                  "|---|---|---|---|---|---|---|---|"]
        for n in names:
            r = runs[n]
            f = r["features"]
            delta = 100.0 * (r["final_val_accuracy"] - base_acc)
            lines.append(f"| {n} | {f['features']} | {f['encoding']} | {f['K'] if f['encoding'] != 'none' else '-'} | "
                         f"{r['config']['train']['lambda_crl']:g} | {_pct(r['final_val_accuracy'])} | "
                         f"{delta:+.1f} | {len(r['epochs'])} |")
        lines += ["", "## Parameter counts", "", "| model | backbone | cls head | chron head | total |",
                  "|---|---|---|---|---|"]
        for n in names:
            pc = runs[n]["param_count"]
            lines.append(f"| {n} | {pc['backbone']} | {pc['cls_head']} | {pc['chron_head']} | {pc['total']} |")
        figures.append(plotting.accuracy_bars({n: runs[n]["final_val_accuracy"] for n in names},
                                              fig_dir / "accuracy.svg"))
        figures.append(plotting.training_curves({n: runs[n]["epochs"] for n in names}, fig_dir / "loss.svg"))
        b = runs[baseline]
        classes = b["class_names"]
        for n in names:
            if n == baseline:
                continue
            r = runs[n]
            lines += ["", f"## Per-class accuracy: `{n}` vs `{baseline}`", "",
                      "| class | baseline (%) | model (%) | delta (pp) | most confused (baseline) | most confused (model) |",
                      "|---|---|---|---|---|---|"]
            deltas = {}
            for c, cname in enumerate(classes):
                ba, ma = b["per_class_accuracy"][c], r["per_class_accuracy"][c]
                deltas[cname] = ma - ba
                lines.append(f"| {cname} | {_pct(ba)} | {_pct(ma)} | {100.0 * (ma - ba):+.1f} | "
                             f"{_class_name(classes, b['most_confused'][c])} | "
                             f"{_class_name(classes, r['most_confused'][c])} |")
            figures.append(plotting.class_deltas(deltas, fig_dir / f"delta_{n}.svg", f"{n} vs {baseline}"))
    for r in exp.by_command("noise-bench"):
        rel = next(k for k in r["artifacts"] if k.endswith(".json"))
        doc = json.loads((root / rel).read_text(encoding="utf-8"))
        eps = sorted({e for d in doc["mean_accuracy"].values() for e in d}, key=float)
        lines += ["", f"## Noise benchmark `{r['id']}` (mean of {doc['trials']} trials)", "",
                  "| model | " + " | ".join(f"eps={e}" for e in eps) + " |", "|---" * (len(eps) + 1) + "|"]
        for m, d in doc["mean_accuracy"].items():
            lines.append(f"| {m} | " + " | ".join(_pct(d.get(e)) for e in eps) + " |")
        svg = next(k for k in r["artifacts"] if k.endswith(".svg"))
        lines += ["", f"![noise]({Path('..') / svg})"]
    for r in exp.by_command("probe"):
        rel = next(k for k in r["artifacts"] if k.endswith(".json"))
        doc = json.loads((root / rel).read_text(encoding="utf-8"))
        lines += ["", f"## Chronological-order probe `{r['id']}`", "",
                  "| kind | mean monotonicity | untrained | degenerate |", "|---|---|---|---|"]
        for kind, d in doc.items():
            lines.append(f"| {kind} | {d['mean_fraction']:.4f} | {d['untrained_mean_fraction']:.4f} | "
                         f"{d['degenerate']} |")
        svg = next(k for k in r["artifacts"] if k.endswith(".svg"))
        lines += ["", f"![probe]({Path('..') / svg})"]
    for r in exp.by_command("ensemble"):
        doc = json.loads((root / next(iter(r["artifacts"]))).read_text(encoding="utf-8"))
        lines += ["", f"## Ensemble `{r['id']}`", "", "| model | val acc (%) |", "|---|---|"]
        lines += [f"| {m} | {_pct(a)} |" for m, a in doc["individual"].items()]
        lines.append(f"| softmax average | {_pct(doc['ensemble'])} |")
    for fig in figures:
        lines += ["", f"![{fig.stem}]({fig.name})"]
    md = fig_dir / "report.md"
    md.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(json.dumps({"report": str(md), "figures": [str(f) for f in figures]}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_train_args(p):
    p.add_argument("--data", required=True, help="dataset directory written by `synth`")
    p.add_argument("--features", choices=("joint", "bone"), default="joint")
    p.add_argument("--encoding", choices=("none", "dce", "tte", "rand_pm1", "repeat"), default="dce")
    p.add_argument("--K", type=_positive_int, default=8)
    p.add_argument("--epochs", type=_positive_int, default=20)
    p.add_argument("--batch-size", type=_positive_int, default=16)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--grad-clip", type=float, default=1.0, help="global gradient-norm cap; 0 disables")
    p.add_argument("--frames", type=_positive_int, default=300)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--target-acc", type=float, default=None, help="stop once validation accuracy reaches this")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True, help="experiment directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chrono-dce", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic skeleton dataset")
    p.add_argument("--classes", choices=("reversal", "mixed", "frequency"), default="mixed")
    p.add_argument("--pairs", type=_positive_int, default=4)
    p.add_argument("--cycles", type=_floats, default=[2.0, 4.0, 7.0])
    p.add_argument("--samples", type=_positive_int, default=100, help="samples per class")
    p.add_argument("--frames", type=_positive_int, default=300)
    p.add_argument("--joints", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train BKB-mini on a dataset")
    _add_train_args(p)
    p.add_argument("--lambda-crl", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("lambda-sweep", help="train once per lambda_crl value")
    _add_train_args(p)
    p.add_argument("--lambdas", type=_floats, default=[0.0, 0.5, 1.0, 2.0])
    p.set_defaults(func=cmd_sweep, lambda_crl=None)

    p = sub.add_parser("noise-bench", help="accuracy under Gaussian noise on the validation split")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--epsilons", type=_floats, default=[0.0, 0.02, 0.05, 0.1, 0.2])
    p.add_argument("--trials", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="noise")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_bench)

    p = sub.add_parser("probe", help="chronological-order probe")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", type=lambda s: s.split(","), default=list(PROBE_KINDS))
    p.add_argument("--K", type=_positive_int, default=3)
    p.add_argument("--epochs", type=_positive_int, default=30)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--frames", type=_positive_int, default=300)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--include-original", action="store_true")
    p.add_argument("--sample", type=int, default=0, help="held-out sample whose curve goes to the CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="probe")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("ensemble", help="average softmax outputs of several checkpoints")
    p.add_argument("--checkpoints", required=True, help="comma-separated checkpoint names or paths")
    p.add_argument("--data", required=True)
    p.add_argument("--name", default="ensemble")
    p.add_argument("--out", default=None, help="experiment directory to record the result in")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("report", help="render markdown + SVG report for an experiment directory")
    p.add_argument("--experiment-dir", required=True)
    p.add_argument("--baseline", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth" and args.joints != DEFAULT_GRAPH.N:
        parser.error(f"--joints must be {DEFAULT_GRAPH.N} for the built-in skeleton")
    if args.command == "probe":
        bad = [k for k in args.kind if k not in PROBE_KINDS]
        if bad:
            parser.error(f"unknown probe kind(s) {bad}; choose from {PROBE_KINDS}")
    try:
        return args.func(args)
    except (ArtifactError, SequenceFormatError, FileNotFoundError) as exc:
        print(f"chrono-dce: error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except TrainingDiverged as exc:
        print(f"chrono-dce: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"chrono-dce: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

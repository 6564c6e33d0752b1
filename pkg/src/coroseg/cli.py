"""Command-line entry point: generate / build / train / eval / cv workflows.

Every command writes its outputs under a run directory along with a
manifest (command, config snapshot, seeds, input hashes, artifact list),
written last so its presence marks a completed run. Reruns from the same
configuration produce byte-identical metrics files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from .centerline import (
    CenterlineError,
    parse_subject,
    prepare_subject,
    serialize_subject,
)
from .graph import GraphBuildError, build_segment_graph, segment_graph_to_json
from .models import ModelConfig, load_model, save_model
from .synth import GenParams, generate_corpus
from .training import (
    MetricsReport,
    TrainConfig,
    TrainingError,
    predict,
    render_comparison_table,
    run_cv,
    select_classes,
    train,
    weighted_f1,
)

EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_CHECK = 3

ALL_MODELS = ["gcn", "gat", "gin", "sage"]


class CheckFailure(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_dir(args) -> Path:
    base = Path(args.out)
    if getattr(args, "run_name", None):
        run = base / args.run_name
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run = base / f"run-{stamp}-s{args.seed}"
    run.mkdir(parents=True, exist_ok=True)
    return run


def _write_manifest(run: Path, command: str, config: dict, inputs: list[Path],
                    artifacts: list[Path], started: float):
    manifest = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "input_hashes": {str(p): _sha256(p) for p in inputs},
        "artifacts": sorted(str(p.relative_to(run)) for p in artifacts),
        "duration_s": time.time() - started,
    }
    (run / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _load_corpus(corpus_dir: str):
    subj_dir = Path(corpus_dir) / "subjects"
    if not subj_dir.is_dir():
        subj_dir = Path(corpus_dir)
    files = sorted(subj_dir.glob("*.json"))
    files = [f for f in files if f.name not in ("manifest.json", "corpus_manifest.json")]
    if not files:
        raise CenterlineError(f"no subject files under {corpus_dir}")
    records = [parse_subject(f.read_bytes()) for f in files]
    return records, files


def _build_dataset(records):
    return [
        (rec.subject_id, build_segment_graph(prepare_subject(rec))) for rec in records
    ]


def cmd_generate(args) -> int:
    started = time.time()
    run = _run_dir(args)
    if args.preset == "low-noise":
        params = GenParams.low_noise(n_subjects=args.subjects, seed=args.seed)
    else:
        params = GenParams(n_subjects=args.subjects, seed=args.seed)
    records, census = generate_corpus(params)
    subj_dir = run / "subjects"
    subj_dir.mkdir(exist_ok=True)
    artifacts = []
    for rec in records:
        p = subj_dir / f"{rec.subject_id}.json"
        p.write_text(serialize_subject(rec))
        artifacts.append(p)
    census_path = run / "corpus_manifest.json"
    census_path.write_text(json.dumps(census, indent=1, sort_keys=True))
    artifacts.append(census_path)
    _write_manifest(run, "generate", {"seed": args.seed, "subjects": args.subjects,
                                      "preset": args.preset}, [], artifacts, started)
    print(f"wrote {len(records)} subjects to {subj_dir}")
    print(f"avg branches {census['avg_branches']:.2f}, avg segments {census['avg_segments']:.2f}")
    return 0


def cmd_build(args) -> int:
    started = time.time()
    run = _run_dir(args)
    inputs = [Path(f) for f in args.subjects]
    artifacts = []
    for f in inputs:
        rec = parse_subject(f.read_bytes())
        sg = build_segment_graph(prepare_subject(rec))
        p = run / f"{rec.subject_id}.graph.json"
        p.write_text(segment_graph_to_json(sg))
        artifacts.append(p)
    _write_manifest(run, "build", {"seed": None}, inputs, artifacts, started)
    print(f"wrote {len(artifacts)} segment graphs to {run}")
    return 0


def _train_config(args, class_mode: int) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch, lr=args.lr,
        folds=args.folds, class_mode=class_mode, seed=args.seed,
    )


def cmd_train(args) -> int:
    started = time.time()
    run = _run_dir(args)
    records, files = _load_corpus(args.corpus)
    dataset = select_classes(_build_dataset(records), args.classes)
    model_cfg = ModelConfig(variant=args.model, num_classes=args.classes, seed=args.seed)
    train_cfg = _train_config(args, args.classes)
    model, trace = train(model_cfg, train_cfg, dataset)
    ckpt = run / f"{args.model}_{args.classes}.checkpoint.json"
    save_model(model, ckpt)
    trace_path = run / f"{args.model}_{args.classes}.loss_trace.json"
    trace_path.write_text(json.dumps(trace))
    _write_manifest(
        run, "train",
        {"seed": args.seed, "model": args.model, "classes": args.classes,
         "epochs": args.epochs, "batch": args.batch, "lr": args.lr},
        files, [ckpt, trace_path], started,
    )
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    run = _run_dir(args)
    records, files = _load_corpus(args.corpus)
    model = load_model(args.checkpoint)
    cfg = TrainConfig(class_mode=model.config.num_classes, seed=args.seed)
    dataset = select_classes(_build_dataset(records), cfg.class_mode)
    preds, labels = predict(model, dataset, cfg.classes)
    metrics = {
        "model": model.config.variant,
        "classes": cfg.class_mode,
        "weighted_f1": weighted_f1(preds, labels, len(cfg.classes)),
        "n_nodes": int(len(labels)),
    }
    out = run / "metrics.json"
    out.write_text(json.dumps(metrics, indent=1, sort_keys=True))
    _write_manifest(run, "eval", {"seed": args.seed, "checkpoint": args.checkpoint},
                    files + [Path(args.checkpoint)], [out], started)
    print(json.dumps(metrics, indent=1, sort_keys=True))
    return 0


def _write_csv(path: Path, classes, matrix):
    lines = ["," + ",".join(classes)]
    for name, row in zip(classes, matrix):
        lines.append(name + "," + ",".join(f"{v:.6f}" for v in row))
    path.write_text("\n".join(lines) + "\n")


def _audit_report(report: MetricsReport, dataset_ids: list[str], class_mode: int, dataset):
    """Acceptance invariants; raises CheckFailure on any violation."""
    flat = [sid for fold in report.fold_test_ids for sid in fold]
    if sorted(flat) != sorted(dataset_ids):
        raise CheckFailure("folds do not partition the subject set")
    if len(set(flat)) != len(flat):
        raise CheckFailure("folds overlap")
    sizes = sorted(len(f) for f in report.fold_test_ids)
    if max(sizes) - min(sizes) > 1:
        raise CheckFailure("fold sizes differ by more than one")
    if abs(report.class_weights.sum() - 1.0) > 1e-12:
        raise CheckFailure("class weights do not sum to 1")
    if not (0.0 <= report.weighted_f1_mean <= 1.0):
        raise CheckFailure("weighted F1 out of range")
    if class_mode == 11:
        for _, sg in dataset:
            if any(lb in ("L-PDA", "L-PLB") for lb in sg.labels):
                raise CheckFailure("11-class dataset still contains removed classes")


def cmd_cv(args) -> int:
    started = time.time()
    run = _run_dir(args)
    records, files = _load_corpus(args.corpus)
    dataset13 = _build_dataset(records)
    modes = [11, 13] if args.classes == "both" else [int(args.classes)]
    variants = ALL_MODELS if args.model == "all" else [args.model]
    rows = []
    reports = {}
    artifacts = []
    for variant in variants:
        row = {"model": variant, "f1_11": None, "f1_13": None}
        for mode in modes:
            model_cfg = ModelConfig(variant=variant, num_classes=mode, seed=args.seed)
            train_cfg = _train_config(args, mode)
            dataset = select_classes(dataset13, mode)
            report = run_cv(model_cfg, train_cfg, dataset)
            if args.check:
                _audit_report(report, [sid for sid, _ in dataset], mode, dataset)
            reports[f"{variant}_{mode}"] = report.to_dict()
            row[f"f1_{mode}"] = report.weighted_f1_mean
            csv_path = run / f"confusion_{variant}_{mode}.csv"
            _write_csv(csv_path, report.classes, report.confusion_normalized)
            artifacts.append(csv_path)
        rows.append(row)
    table = render_comparison_table(rows)
    report_json = run / "report.json"
    report_json.write_text(
        json.dumps({"comparison": rows, "details": reports}, indent=1, sort_keys=True)
    )
    report_txt = run / "report.txt"
    report_txt.write_text(table + "\n")
    artifacts += [report_json, report_txt]
    _write_manifest(
        run, "cv",
        {"seed": args.seed, "model": args.model, "classes": args.classes,
         "epochs": args.epochs, "batch": args.batch, "lr": args.lr,
         "folds": args.folds},
        files, artifacts, started,
    )
    print(table)
    return 0


DEFAULTS = {
    "seed": 0, "epochs": 500, "batch": 8, "lr": 1e-3, "folds": 5,
    "out": "runs", "subjects": 141, "preset": "default", "model": "sage",
    "classes": 13,
}


def _resolve(args):
    """Precedence: explicit flags > config file > built-in defaults."""
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text())
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None and hasattr(args, key):
            setattr(args, key, file_cfg.get(key, default))
    return args


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coroseg",
        description="Coronary segment labeling: synthetic data, graphs, GNN training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_flags=False):
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="base output directory (default: runs)")
        p.add_argument("--run-name", help="fixed run directory name (default: timestamped)")
        p.add_argument("--config", help="JSON config file; flags override it")
        if model_flags:
            p.add_argument("--epochs", type=int)
            p.add_argument("--batch", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--folds", type=int)

    g = sub.add_parser("generate", help="emit a synthetic labeled corpus")
    g.add_argument("--subjects", type=int)
    g.add_argument("--preset", choices=["default", "low-noise"])
    common(g)
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("build", help="convert subject files to segment graphs")
    b.add_argument("subjects", nargs="+", help="subject JSON files")
    common(b)
    b.set_defaults(func=cmd_build)

    t = sub.add_parser("train", help="train one model on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--model", choices=ALL_MODELS)
    t.add_argument("--classes", type=int, choices=[11, 13])
    common(t, model_flags=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    common(e)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cv", help="cross-validated model comparison report")
    c.add_argument("--corpus", required=True)
    c.add_argument("--model", choices=ALL_MODELS + ["all"])
    c.add_argument("--classes", choices=["11", "13", "both"], default=None)
    c.add_argument("--check", action="store_true",
                   help="audit acceptance invariants; exit 3 on violation")
    common(c, model_flags=True)
    c.set_defaults(func=cmd_cv)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "cv" and args.classes is None:
        args.classes = "13"
    _resolve(args)
    try:
        return args.func(args)
    except CheckFailure as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (CenterlineError, GraphBuildError, TrainingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: gen, pretrain, distill, eval, sweep.

Every run writes a manifest.json (config snapshot, seed, tool version,
declared artifacts) into its output directory before any work starts, so
a finished run can be reproduced byte-for-byte from the manifest's config.
Wall-clock timings go to a separate timing.json because every other report
is deterministic.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O error,
4 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import AppConfig, config_to_dict, load_config, with_train
from .datasets import Dataset, gen_dataset, read_dataset, write_dataset
from .ensemble import TeacherPool
from .errors import ConfigError, DivergenceError, ParseError, SchemaError, UsageError
from .metrics import write_ter_csv
from .model import ParamVector
from .trainer import SINGLE_TEACHER_MODES, FilterRow, MODES, RunReport, distill, evaluate, pretrain_teacher, report_to_json

logger = logging.getLogger(__name__)

_CONFIG_ERRORS = (ConfigError, UsageError, ParseError, SchemaError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


def _domain_dir(domain_id: int) -> str:
    return "target" if domain_id == 0 else f"source_{domain_id}"


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out: Path, command: str, cfg: AppConfig, inputs: dict, artifacts: dict, extra: dict | None = None) -> None:
    doc = {
        "tool": "simteach",
        "version": __version__,
        "command": command,
        "seed": cfg.train.seed,
        "mode": cfg.train.mode,
        "config": config_to_dict(cfg),
        "inputs": inputs,
        "artifacts": artifacts,
    }
    if extra:
        doc.update(extra)
    _write_json(out / "manifest.json", doc)


def _load_split(data_dir: Path, domain_id: int, split: str) -> Dataset:
    path = data_dir / _domain_dir(domain_id) / f"{split}.jsonl"
    if not path.exists():
        raise ConfigError(f"missing dataset file: {path}")
    return read_dataset(path)


def _load_teachers(cfg: AppConfig, teachers_dir: Path) -> list[ParamVector]:
    ckpt_dir = teachers_dir / "checkpoints"
    if not ckpt_dir.is_dir():
        ckpt_dir = teachers_dir
    paths = sorted(ckpt_dir.glob("teacher_*.ckpt"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise ConfigError(f"no teacher checkpoints (teacher_*.ckpt) found under {teachers_dir}")
    teachers = []
    for path in paths:
        params, _ = load_checkpoint(path)
        if params.arch != cfg.arch:
            raise ConfigError(f"{path}: checkpoint architecture {params.arch} does not match config {cfg.arch}")
        teachers.append(params)
    return teachers


class _FilterCsvSink:
    """Streams filtering rows to CSV; one file per stage when the pool grows."""

    def __init__(self, reports_dir: Path, stages: int):
        self.dir = reports_dir
        self.stages = stages
        self.stage = None
        self.fh = None
        self.writer = None

    def path_for(self, stage: int) -> Path:
        name = "filtering.csv" if self.stages == 1 else f"filtering_stage{stage}.csv"
        return self.dir / name

    def __call__(self, row: FilterRow):
        if row.stage != self.stage:
            self.close()
            self.stage = row.stage
            self.fh = open(self.path_for(row.stage), "w", newline="", encoding="utf-8")
            self.writer = csv.writer(self.fh)
            q_cols = [f"q_{i}" for i in range(1, len(row.confidences) + 1)]
            self.writer.writerow(["epoch", "batch", "utterance_id", *q_cols, "b", "q_hat", "kept", "drop_reason"])
        self.writer.writerow(
            [
                row.epoch,
                row.batch,
                row.utterance_id,
                *[f"{q:.6f}" for q in row.confidences],
                row.selected,
                f"{row.q_hat:.6f}",
                int(row.kept),
                row.drop_reason or "",
            ]
        )

    def close(self):
        if self.fh is not None:
            self.fh.close()
            self.fh = None


def _write_epochs_csv(path: Path, report: RunReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "dev_ter", "retention", "mean_confidence"])
        for e in report.epochs:
            writer.writerow([e.epoch, e.step, f"{e.dev_ter:.6f}", f"{e.retention:.6f}", f"{e.mean_confidence:.6f}"])


def cmd_gen(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    worlds = gen_dataset(cfg.gen, cfg.train.seed)
    dataset_paths = []
    for domain_id in sorted(worlds):
        ddir = out / _domain_dir(domain_id)
        ddir.mkdir(parents=True, exist_ok=True)
        for split, ds in worlds[domain_id].items():
            path = ddir / f"{split}.jsonl"
            write_dataset(ds, path)
            dataset_paths.append(str(path.relative_to(out)))
    _write_manifest(out, "gen", cfg, inputs={}, artifacts={"datasets": sorted(dataset_paths)})
    print(f"generated {len(dataset_paths)} dataset files under {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    data_dir = Path(args.data)
    out = Path(args.out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)

    source_ids = list(range(1, cfg.gen.num_sources + 1))
    ckpts = [f"checkpoints/teacher_{i}.ckpt" for i in source_ids]
    _write_manifest(
        out,
        "pretrain",
        cfg,
        inputs={"data": str(data_dir)},
        artifacts={"checkpoints": ckpts, "reports": ["reports/teachers.csv"]},
    )

    target_dev = _load_split(data_dir, 0, "dev")
    target_test = _load_split(data_dir, 0, "test")
    rows = []
    t0 = time.perf_counter()
    for i in source_ids:
        train = _load_split(data_dir, i, "train")
        dev = _load_split(data_dir, i, "dev")
        res = pretrain_teacher(train, dev, cfg.arch, cfg.train)
        save_checkpoint(out / "checkpoints" / f"teacher_{i}.ckpt", res.params, cfg.train.seed, res.steps, "pretrain")
        rows.append((f"teacher_{i}", "source_dev", evaluate(res.params, dev).overall))
        rows.append((f"teacher_{i}", "target_dev", evaluate(res.params, target_dev).overall))
        rows.append((f"teacher_{i}", "target_test", evaluate(res.params, target_test).overall))
        print(f"teacher_{i}: best epoch {res.best_epoch}, source dev TER {res.best_dev_ter:.4f}")
    write_ter_csv(out / "reports" / "teachers.csv", rows)
    _write_json(out / "reports" / "timing.json", {"wall_time_sec": time.perf_counter() - t0})
    print(f"wrote {len(source_ids)} teacher checkpoints under {out}")
    return EXIT_OK


def _run_distill(cfg: AppConfig, data_dir: Path, teachers_dir: Path, out: Path) -> dict:
    """Shared distill runner for cmd_distill and cmd_sweep. Returns run status."""
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)

    teachers = _load_teachers(cfg, teachers_dir)
    target_train = _load_split(data_dir, 0, "train")
    target_dev = _load_split(data_dir, 0, "dev")
    target_test = _load_split(data_dir, 0, "test")

    selected_teacher = None
    if cfg.train.mode in SINGLE_TEACHER_MODES:
        dev_ters = [evaluate(t, target_dev).ter for t in teachers]
        selected_teacher = int(min(range(len(teachers)), key=lambda i: (dev_ters[i], i))) + 1
        pool = TeacherPool([teachers[selected_teacher - 1]], cfg.arch)
        logger.info(
            "mode %s: selected teacher_%d (target-dev TER %.4f)",
            cfg.train.mode,
            selected_teacher,
            dev_ters[selected_teacher - 1],
        )
    else:
        pool = TeacherPool(list(teachers), cfg.arch)

    stages = cfg.train.mets_stages if cfg.train.mode == "mets" else 1
    sink = _FilterCsvSink(out / "reports", stages)
    filter_csvs = [str(sink.path_for(s).relative_to(out)) for s in range(1, stages + 1)]
    _write_manifest(
        out,
        "distill",
        cfg,
        inputs={"data": str(data_dir), "teachers": str(teachers_dir)},
        artifacts={
            "checkpoints": ["checkpoints/student.ckpt"],
            "reports": ["reports/run.json", "reports/epochs.csv", "reports/final.csv", *filter_csvs],
        },
        extra={"selected_teacher": selected_teacher},
    )

    diverged = False
    try:
        student, report = distill(pool, target_train, target_dev, cfg.train, filter_sink=sink)
    except DivergenceError as exc:
        diverged = True
        report = exc.report
        student = exc.params
        logger.warning("run diverged at step %s: %s", exc.step, exc)
    finally:
        sink.close()

    run_doc = report_to_json(report)
    run_doc.update({"mode": cfg.train.mode, "seed": cfg.train.seed, "selected_teacher": selected_teacher})

    rows = []
    if student is not None:
        save_checkpoint(out / "checkpoints" / "student.ckpt", student, cfg.train.seed, report.final_step, cfg.train.mode)
        if not diverged:
            student_test = evaluate(student, target_test).overall
            run_doc["student_test_ter"] = student_test.ter
            rows.append((f"{cfg.train.mode}_student", "target_test", student_test))
            pre_ters, final_ters = [], []
            for i, t in enumerate(teachers, start=1):
                rep = evaluate(t, target_test).overall
                pre_ters.append(rep.ter)
                rows.append((f"teacher_{i}_pretrained", "target_test", rep))
            for i, t in enumerate(report.final_pool.teachers, start=1):
                rep = evaluate(t, target_test).overall
                final_ters.append(rep.ter)
                rows.append((f"teacher_{i}_final", "target_test", rep))
            run_doc["teacher_test_ter"] = {"pretrained": pre_ters, "final": final_ters}

    _write_json(out / "reports" / "run.json", run_doc)
    _write_epochs_csv(out / "reports" / "epochs.csv", report)
    write_ter_csv(out / "reports" / "final.csv", rows)
    _write_json(out / "reports" / "timing.json", {"wall_time_sec": report.wall_time_sec})
    return {
        "diverged": diverged,
        "divergence_step": report.divergence_step,
        "final_step": report.final_step,
        "report": report,
    }


def cmd_distill(args) -> int:
    cfg = load_config(args.config, mode_override=args.mode, seed_override=args.seed)
    status = _run_distill(cfg, Path(args.data), Path(args.teachers), Path(args.out))
    if status["diverged"]:
        print(f"run diverged at step {status['divergence_step']}; partial reports written")
        return EXIT_DIVERGED
    print(f"distilled student ({cfg.train.mode}) after {status['final_step']} steps; reports under {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    params, _ = load_checkpoint(args.checkpoint)
    if params.arch != cfg.arch:
        raise ConfigError(f"{args.checkpoint}: checkpoint architecture does not match config")
    test = _load_split(Path(args.data), 0, args.split)
    rep = evaluate(params, test)
    out = Path(args.out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    rows = [("eval", f"target_{args.split}", rep.overall)]
    for dom, dom_rep in rep.per_domain.items():
        rows.append((f"eval_domain_{dom}", f"target_{args.split}", dom_rep))
    write_ter_csv(out / "reports" / "eval.csv", rows)
    print(f"TER on target {args.split}: {rep.ter:.4f} ({rep.overall.distance} edits / {rep.overall.ref_tokens} tokens)")
    return EXIT_OK


_SWEEPABLE = ("alpha", "delta", "tau")


def _parse_sweep_values(param: str, raw: str) -> list:
    values = []
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            x = float(chunk)
        except ValueError as exc:
            raise ConfigError(f"invalid sweep value '{chunk}'") from exc
        if param == "delta":
            if x != int(x) or int(x) < 1:
                raise ConfigError(f"delta sweep values must be integers >= 1, got {chunk}")
            values.append(int(x))
        else:
            if not 0.0 <= x <= 1.0:
                raise ConfigError(f"{param} sweep values must be in [0, 1], got {chunk}")
            values.append(x)
    if not values:
        raise ConfigError("sweep needs at least one value")
    return values


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, mode_override=args.mode, seed_override=args.seed)
    values = _parse_sweep_values(args.param, args.values)
    out = Path(args.out)
    (out / "reports").mkdir(parents=True, exist_ok=True)

    run_dirs = {v: out / "runs" / f"{args.param}={v}" for v in values}
    _write_manifest(
        out,
        "sweep",
        cfg,
        inputs={"data": str(args.data), "teachers": str(args.teachers)},
        artifacts={
            "reports": ["reports/sweep.csv", "reports/sweep.json"],
            "runs": [str(d.relative_to(out)) for d in run_dirs.values()],
        },
        extra={"param": args.param, "values": values},
    )

    summary = []
    with open(out / "reports" / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "value", "epoch", "step", "dev_ter", "retention", "mean_confidence"])
        for value in values:
            run_cfg = with_train(cfg, **{args.param: value})
            status = _run_distill(run_cfg, Path(args.data), Path(args.teachers), run_dirs[value])
            for e in status["report"].epochs:
                writer.writerow(
                    [
                        args.param,
                        value,
                        e.epoch,
                        e.step,
                        f"{e.dev_ter:.6f}",
                        f"{e.retention:.6f}",
                        f"{e.mean_confidence:.6f}",
                    ]
                )
            summary.append(
                {
                    "value": value,
                    "diverged": status["diverged"],
                    "divergence_step": status["divergence_step"],
                    "final_step": status["final_step"],
                }
            )
            flag = " [diverged]" if status["diverged"] else ""
            print(f"sweep {args.param}={value}: {status['final_step']} steps{flag}")
    _write_json(out / "reports" / "sweep.json", {"param": args.param, "runs": summary})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simteach", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"simteach {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=False, teachers=False):
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override training.seed")
        if data:
            p.add_argument("--data", required=True, help="dataset directory (from `gen`)")
        if teachers:
            p.add_argument("--teachers", required=True, help="pretrain output directory with teacher checkpoints")

    p = sub.add_parser("gen", help="generate the synthetic multi-domain benchmark")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="train one teacher per labelled source domain")
    common(p, data=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("distill", help="train a student on unlabelled target data")
    common(p, data=True, teachers=True)
    p.add_argument("--mode", choices=MODES, default=None, help="override training.mode")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a target split")
    common(p, data=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint to evaluate")
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run distill across several values of one hyperparameter")
    common(p, data=True, teachers=True)
    p.add_argument("--mode", choices=MODES, default=None, help="override training.mode")
    p.add_argument("--param", choices=_SWEEPABLE, required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``assign-hoi {synth,train,eval,plot}``.

Every command resolves one configuration from defaults, an optional JSON
file (``--config``), dedicated flags and free ``--section.key=value``
overrides, then writes the resolved configuration next to its outputs.
Passing that file back through ``--config`` repeats the run.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import torch

from . import metrics, plotting
from .baselines import BaselineConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (default_output_root, load_dataset, split_leave_one_subject_out, split_validation,
                   write_dataset)
from .errors import AssignError, ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .synthetic import SyntheticConfig, generate_synthetic
from .training import (TrainSchedule, build_model, cross_validate, evaluate, flatten_report, predict,
                       train)

log = logging.getLogger("assign_hoi")

RESOLVED_NAME = "resolved_config.json"

SECTIONS = {
    "model": ModelConfig,
    "baseline": BaselineConfig,
    "loss": LossConfig,
    "schedule": TrainSchedule,
    "synthetic": SyntheticConfig,
}


def default_config() -> dict:
    cfg = {name: _to_dict(cls()) for name, cls in SECTIONS.items()}
    cfg["run"] = {
        "kind": "assign",
        "dataset": None,
        "output": None,
        "checkpoint": None,
        "fold_subject": None,
        "loso": False,
        "known_segmentation": False,
        "jobs": 1,
        "dump": False,
    }
    return cfg


def _to_dict(obj) -> dict:
    return json.loads(json.dumps(obj.to_dict()))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        section, dot, name = key.partition(".")
        if not dot or section not in cfg:
            raise ConfigError(f"unknown config section in {item!r}")
        if name not in cfg[section]:
            raise ConfigError(f"unknown key {name!r} in section {section!r}")
        cfg[section][name] = _parse_value(value)
    return cfg


def merge_file(cfg: dict, path) -> dict:
    try:
        loaded = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = copy.deepcopy(cfg)
    for section, values in loaded.items():
        if section not in cfg or not isinstance(values, dict):
            raise ConfigError(f"unknown config section {section!r}")
        for k, v in values.items():
            if k not in cfg[section]:
                raise ConfigError(f"unknown key {k!r} in section {section!r}")
            cfg[section][k] = v
    return cfg


def build_sections(cfg: dict) -> dict:
    """Validate every section by constructing its dataclass."""
    try:
        return {name: cls.from_dict(cfg[name]) if hasattr(cls, "from_dict") else cls(**cfg[name])
                for name, cls in SECTIONS.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def write_resolved(cfg: dict, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_NAME
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    sections = build_sections(cfg)
    out = Path(cfg["run"]["output"] or default_output_root() / "synthetic")
    dataset = generate_synthetic(sections["synthetic"])
    manifest = write_dataset(dataset, out)
    write_resolved(cfg, out)
    print(f"wrote {len(manifest['videos'])} videos to {out}")
    return 0


def _require(cfg, key):
    if not cfg["run"].get(key):
        raise ConfigError(f"missing required setting run.{key}")
    return cfg["run"][key]


def _model_config(cfg, sections, dataset):
    """Section of the chosen model kind, sized for ``dataset``."""
    kind = cfg["run"]["kind"]
    if kind == "assign":
        d = dict(cfg["model"])
    else:
        d = dict(cfg["baseline"])
    d["feature_dim"] = dataset.feature_dim
    d["num_labels"] = dataset.num_labels
    return d


def cmd_train(cfg: dict) -> int:
    sections = build_sections(cfg)
    run = cfg["run"]
    dataset = load_dataset(_require(cfg, "dataset"), jobs=run["jobs"])
    out = Path(run["output"] or default_output_root() / "train")
    out.mkdir(parents=True, exist_ok=True)
    kind = run["kind"]
    mcfg = _model_config(cfg, sections, dataset)
    schedule, loss_cfg = sections["schedule"], sections["loss"]
    meta = {"loss": loss_cfg.to_dict(), "schedule": schedule.to_dict()}
    write_resolved(cfg, out)

    if run["loso"]:
        cv = cross_validate(dataset, kind, mcfg, schedule, loss_cfg, log_dir=out, keep_models=True)
        for fold in cv["folds"]:
            fold_dir = out / f"fold_{fold.subject}"
            res = fold.train_result
            save_checkpoint(res.model, fold_dir / "best.ckpt", dataset.vocab_hash(),
                            meta | {"tag": "best", "held_out": fold.subject})
            _save_last(res, fold_dir / "last.ckpt", dataset, meta | {"held_out": fold.subject})
        summary = {
            "folds": [{"subject": f.subject, "num_fit": f.num_fit, "num_val": f.num_val,
                       "num_test": f.num_test, "metrics": f.metrics} for f in cv["folds"]],
            "summary": cv["summary"],
        }
        (out / "cv_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        print(format_summary(cv["summary"]))
        return 0

    videos = list(dataset)
    test = []
    if run["fold_subject"]:
        videos, test = split_leave_one_subject_out(dataset, run["fold_subject"])
    fit, val = split_validation(videos, schedule.validation_fraction, schedule.seed)
    model = build_model(kind, mcfg, schedule.seed)
    res = train(model, fit, val, schedule, loss_cfg, out / "train.jsonl")
    tag = {"held_out": run["fold_subject"]} if run["fold_subject"] else {}
    save_checkpoint(res.model, out / "best.ckpt", dataset.vocab_hash(), meta | tag | {"tag": "best"})
    _save_last(res, out / "last.ckpt", dataset, meta | tag)
    if test:
        reports = evaluate(res.model, test)
        (out / "test_report.json").write_text(metrics.report_to_json(reports, {"held_out": run["fold_subject"]}))
        print(json.dumps(flatten_report(reports), indent=2, sort_keys=True))
    print(f"best checkpoint: stage {res.best_stage} epoch {res.best_epoch} "
          f"val loss {res.best_val_loss:.4f}")
    return 0


def _save_last(res, path, dataset, meta):
    best_state = copy.deepcopy(res.model.state_dict())
    res.model.load_state_dict(res.last_state)
    save_checkpoint(res.model, path, dataset.vocab_hash(), meta | {"tag": "last"})
    res.model.load_state_dict(best_state)


def format_summary(summary: dict) -> str:
    width = max(len(k) for k in summary)
    lines = [f"{'metric':<{width}}  mean ± std"]
    for k in sorted(summary):
        lines.append(f"{k:<{width}}  {summary[k]['mean']:.2f} ± {summary[k]['std']:.2f}")
    return "\n".join(lines)


def cmd_eval(cfg: dict) -> int:
    run = cfg["run"]
    dataset = load_dataset(_require(cfg, "dataset"), jobs=run["jobs"])
    model, header = load_checkpoint(_require(cfg, "checkpoint"), expected_vocab_hash=dataset.vocab_hash())
    videos = list(dataset)
    held_out = run["fold_subject"] or header.get("meta", {}).get("held_out")
    if held_out:
        videos = split_leave_one_subject_out(dataset, held_out)[1]
    out = Path(run["output"] or default_output_root() / "eval")
    out.mkdir(parents=True, exist_ok=True)
    known = bool(run["known_segmentation"])
    preds, outputs = predict(model, videos, known_segmentation=known, return_outputs=True)
    reports = metrics.evaluate_dataset(preds, videos)
    meta = {"checkpoint_kind": header["kind"], "known_segmentation": known,
            "videos": sorted(v.id for v in videos), "vocab_hash": header["vocab_hash"]}
    (out / "report.json").write_text(metrics.report_to_json(reports, meta))
    (out / "report.csv").write_text(metrics.report_to_csv({header["kind"]: reports}))
    if run["dump"]:
        method = header["kind"] + ("_known" if known else "")
        plotting.write_dump(out / "predictions.jsonl",
                            plotting.dump_records(method, videos, preds, outputs))
    write_resolved(cfg, out)
    print(json.dumps(flatten_report(reports), indent=2, sort_keys=True))
    return 0


def cmd_plot(cfg: dict, dumps) -> int:
    run = cfg["run"]
    if not dumps:
        raise ConfigError("plot needs at least one --dump file")
    records = [r for path in dumps for r in plotting.read_dump(path)]
    out = Path(run["output"] or default_output_root() / "plots")
    written = plotting.render(records, out)
    write_resolved(cfg, out)
    print(f"wrote {len(written)} figures to {out}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="JSON config file (a resolved config repeats a run)")
    common.add_argument("--out", dest="output", help="output directory")
    common.add_argument("--seed", type=int, help="seed for generation, splits, init and noise")
    common.add_argument("--jobs", type=int, help="parallel workers for per-video tasks")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(
        prog="assign-hoi",
        allow_abbrev=False,
        description="Joint segmentation and labelling of human/object feature tracks.",
        epilog="Any setting can be overridden with --section.key=value, "
               "e.g. --schedule.stage2_epochs=10 or --model.frame_hidden=32.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], allow_abbrev=False, help="generate a synthetic dataset")

    t = sub.add_parser("train", parents=[common], allow_abbrev=False, help="train a model")
    t.add_argument("--dataset")
    t.add_argument("--kind", choices=["assign", "independent_birnn", "relational_birnn"])
    folds = t.add_mutually_exclusive_group()
    folds.add_argument("--fold-subject", help="hold out one subject and report on it")
    folds.add_argument("--loso", action="store_true", help="train every leave-one-subject-out fold")
    t.add_argument("--no-messages", action="store_true", help="disable attention messages")
    t.add_argument("--no-seg-loss", action="store_true", help="drop the segmentation loss")
    t.add_argument("--dense-update", action="store_true", help="update the segment layer every frame")
    t.add_argument("--no-pretrain", action="store_true", help="skip the dense first stage")

    e = sub.add_parser("eval", parents=[common], allow_abbrev=False, help="evaluate a checkpoint")
    e.add_argument("--dataset")
    e.add_argument("--checkpoint")
    e.add_argument("--fold-subject", help="evaluate on this subject only")
    e.add_argument("--known-segmentation", action="store_true",
                   help="inject ground-truth boundaries and only label segments")
    e.add_argument("--dump", action="store_true", help="also write per-frame JSON-lines predictions")

    pl = sub.add_parser("plot", parents=[common], allow_abbrev=False, help="render ribbons and attention heatmaps")
    pl.add_argument("--dump", dest="dumps", action="append", default=[], help="prediction dump file")
    return p


def resolve(args, extra) -> dict:
    cfg = default_config()
    if args.config:
        cfg = merge_file(cfg, args.config)
    run = cfg["run"]
    for key in ("output", "dataset", "kind", "fold_subject", "checkpoint", "jobs"):
        value = getattr(args, key, None)
        if value is not None:
            run[key] = value
    for key in ("loso", "known_segmentation"):
        if getattr(args, key, False):
            run[key] = True
    if args.command == "eval" and args.dump:
        run["dump"] = True
    if args.seed is not None:
        cfg["synthetic"]["seed"] = args.seed
        cfg["schedule"]["seed"] = args.seed
    if getattr(args, "no_messages", False):
        cfg["model"]["message_passing_enabled"] = False
    if getattr(args, "no_seg_loss", False):
        cfg["loss"]["enable_seg_loss"] = False
    if getattr(args, "dense_update", False):
        cfg["model"]["dense_update_mode"] = True
    if getattr(args, "no_pretrain", False):
        cfg["schedule"]["skip_stage1"] = True
    overrides = []
    for token in extra:
        if not token.startswith("--"):
            raise ConfigError(f"unexpected argument {token!r}")
        overrides.append(token[2:])
    cfg = apply_overrides(cfg, overrides)
    build_sections(cfg)
    return cfg


def main(argv=None) -> int:
    parser = _parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args, extra)
        if cfg["run"]["jobs"] and cfg["run"]["jobs"] > 0:
            torch.set_num_threads(int(cfg["run"]["jobs"]))
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        return cmd_plot(cfg, args.dumps)
    except AssignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

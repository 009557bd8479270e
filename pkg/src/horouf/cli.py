"""Command line entry point.

Subcommands: split, trim, augment, pool, synth, train, attack, eval, sweep,
report. Settings resolve flag > config file > HOROUF_SEED (for seeds) >
built-in default, and every run writes its fully resolved configuration to
<out>/run_config.ini so outputs can be reproduced byte for byte. Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import AttackConfig, pgd
from .audio import (
    AugmentKind,
    AugmentRanges,
    AugmentSpec,
    TrimConfig,
    augment,
    fan_out,
    read_wav,
    trim_silence,
    write_wav,
)
from .corpus import (
    Manifest,
    ManifestEntry,
    Split,
    decode_label,
    load_manifest,
    rebase_paths,
    save_manifest,
    split_manifest,
)
from .embedding import assemble, mean_pool, read_hrf, write_hrf
from .errors import DataError, HoroufError, NumericError, UsageError
from .evaluation import (
    EvalReport,
    SweepResult,
    evaluate,
    render_report,
    sweep,
    sweep_svg,
    write_report,
)
from .neural import Batch, init_mlp, load_checkpoint, save_checkpoint, train
from .oracle import SyntheticSpec, generate
from .util import batch_slices, float_token

SEED_ENV_VAR = "HOROUF_SEED"
RUN_CONFIG_NAME = "run_config.ini"


@dataclass(frozen=True)
class Opt:
    name: str
    kind: str  # int | float | str | bool | floats | ints
    default: object = None
    help: str = ""
    required: bool = False


_SEED_OPT = Opt("seed", "int", None, f"random seed; falls back to ${SEED_ENV_VAR}, then 0")

COMMANDS: dict[str, list[Opt]] = {
    "split": [
        Opt("manifest", "str", required=True, help="input manifest (JSON lines)"),
        Opt("out", "str", required=True, help="output directory"),
        Opt("train_frac", "float", 0.68, "fraction of each class assigned to train"),
        Opt("val_frac", "float", 0.12, "fraction of each class assigned to validation"),
        _SEED_OPT,
        Opt("strict", "bool", False, "reject unknown manifest fields"),
    ],
    "trim": [
        Opt("input", "str", required=True, help="input WAV file"),
        Opt("out", "str", required=True, help="output directory"),
        Opt("frame_len", "int", 320, "analysis frame length in samples"),
        Opt("threshold", "float", 1e-4, "mean-square energy threshold"),
        Opt("encoding", "str", "pcm16", "output sample encoding: pcm16 or float32"),
    ],
    "augment": [
        Opt("manifest", "str", help="manifest to fan out (omit for single-file mode)"),
        Opt("input", "str", help="single WAV to augment instead of a manifest"),
        Opt("out", "str", required=True, help="output directory"),
        Opt("specs_per_entry", "float", 2.75, "average augmented children per train original"),
        Opt("kind", "str", None, "single-file mode: gaussian-noise|pitch-shift|time-stretch|circular-shift"),
        Opt("value", "float", None, "single-file mode: the augmentation parameter"),
        Opt("sigma_min", "float", 0.001), Opt("sigma_max", "float", 0.02),
        Opt("semitones_min", "float", -2.0), Opt("semitones_max", "float", 2.0),
        Opt("rate_min", "float", 0.85), Opt("rate_max", "float", 1.18),
        _SEED_OPT,
        Opt("strict", "bool", False),
    ],
    "pool": [
        Opt("manifest", "str", required=True),
        Opt("out", "str", required=True),
        Opt("strict", "bool", False),
    ],
    "synth": [
        Opt("classes", "int", 10), Opt("dim", "int", 64), Opt("per_class", "int", 200),
        Opt("sigma", "float", 0.8), Opt("margin", "float", 6.0),
        _SEED_OPT,
        Opt("out", "str", required=True),
    ],
    "train": [
        Opt("manifest", "str", required=True),
        Opt("out", "str", required=True),
        Opt("epochs", "int", 9), Opt("batch_size", "int", 32), Opt("lr", "float", 1e-3),
        Opt("hidden", "ints", (256, 128), "hidden layer widths"),
        Opt("dropout", "float", 0.3),
        Opt("classes", "int", 0, "class count; 0 infers max label + 1"),
        Opt("adversarial", "bool", False, "train on attacked batches"),
        Opt("epsilon", "float", 0.1, "attack budget for adversarial training"),
        Opt("steps", "int", 10, "attack iterations per batch"),
        Opt("alpha", "float", 0.0, "attack step size; 0 means 2.5*epsilon/steps"),
        Opt("init", "str", "zero", "attack start: zero or random"),
        _SEED_OPT,
        Opt("strict", "bool", False),
    ],
    "attack": [
        Opt("model", "str", required=True, help="checkpoint to attack"),
        Opt("manifest", "str", required=True),
        Opt("out", "str", required=True),
        Opt("split", "str", "test"),
        Opt("epsilon", "float", 0.05), Opt("steps", "int", 50),
        Opt("alpha", "float", 0.0, "0 means 2.5*epsilon/steps"),
        Opt("init", "str", "zero"), Opt("init_seed", "int", 0),
        Opt("batch_size", "int", 256),
        Opt("strict", "bool", False),
    ],
    "eval": [
        Opt("model", "str", required=True),
        Opt("manifest", "str", required=True),
        Opt("out", "str", required=True),
        Opt("split", "str", "test"),
        Opt("batch_size", "int", 256),
        Opt("threads", "int", 0, "worker threads; 0 means logical cores"),
        Opt("strict", "bool", False),
    ],
    "sweep": [
        Opt("standard", "str", required=True, help="checkpoint of the standard model"),
        Opt("adversarial", "str", required=True, help="checkpoint of the robust model"),
        Opt("manifest", "str", required=True),
        Opt("out", "str", required=True),
        Opt("split", "str", "test"),
        Opt("epsilons", "floats", (0.0, 0.01, 0.02, 0.05, 0.1)),
        Opt("steps", "int", 50),
        Opt("alpha", "float", 0.0, "0 means 2.5*epsilon/steps"),
        Opt("init", "str", "zero"), Opt("init_seed", "int", 0),
        Opt("batch_size", "int", 256),
        Opt("threads", "int", 0, "worker threads; 0 means logical cores"),
        Opt("svg", "bool", False, "also write sweep.svg"),
        Opt("strict", "bool", False),
    ],
    "report": [
        Opt("eval", "str", None, "report.json produced by the eval command"),
        Opt("sweep", "str", None, "sweep.csv produced by the sweep command"),
        Opt("out", "str", required=True),
        Opt("svg", "bool", False),
    ],
}


def _parse_value(opt: Opt, raw: str):
    try:
        if opt.kind == "int":
            return int(raw)
        if opt.kind == "float":
            return float(raw)
        if opt.kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if opt.kind == "floats":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        if opt.kind == "ints":
            return tuple(int(tok) for tok in raw.split(",") if tok.strip())
        return raw
    except ValueError as exc:
        raise UsageError(f"bad value {raw!r} for --{opt.name.replace('_', '-')}") from exc


def _format_value(opt: Opt, value) -> str:
    if value is None:
        return ""
    if opt.kind == "bool":
        return "true" if value else "false"
    if opt.kind == "floats":
        return ",".join(float_token(v) for v in value)
    if opt.kind == "ints":
        return ",".join(str(int(v)) for v in value)
    if opt.kind == "float":
        return float_token(value)
    return str(value)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="horouf", description=__doc__)
    parser.add_argument("--version", action="version", version=f"horouf {__version__}")
    parser.add_argument("--json", action="store_true", help="machine-readable output lines")
    sub = parser.add_subparsers(dest="command")
    for command, opts in COMMANDS.items():
        p = sub.add_parser(command, add_help=True)
        p.add_argument("--config", default=None, help="config file with a [%s] section" % command)
        for opt in opts:
            flag = "--" + opt.name.replace("_", "-")
            if opt.name == "input":
                flag = "--in"
            if opt.kind == "bool":
                p.add_argument(flag, dest=opt.name, action="store_const", const=True,
                               default=None, help=opt.help)
            else:
                p.add_argument(flag, dest=opt.name, default=None, help=opt.help)
    return parser


def _resolve(command: str, args: argparse.Namespace) -> dict:
    file_values: dict[str, str] = {}
    if args.config:
        cp = configparser.ConfigParser()
        read = cp.read(args.config)
        if not read:
            raise DataError(f"config file {args.config!r} not found")
        if cp.has_section(command):
            file_values = dict(cp.items(command))

    resolved = {}
    for opt in COMMANDS[command]:
        flag_value = getattr(args, opt.name)
        if flag_value is not None:
            value = flag_value if opt.kind == "bool" else _parse_value(opt, flag_value)
        elif opt.name in file_values:
            value = _parse_value(opt, file_values[opt.name])
        elif opt.name == "seed" and os.environ.get(SEED_ENV_VAR):
            value = _parse_value(opt, os.environ[SEED_ENV_VAR])
        elif opt.name == "seed":
            value = 0
        else:
            value = opt.default
        if value is None and opt.required:
            raise UsageError(f"horouf {command}: --{opt.name.replace('_', '-')} is required")
        resolved[opt.name] = value
    return resolved


def _write_run_config(command: str, cfg: dict, out_dir: Path) -> None:
    cp = configparser.ConfigParser()
    cp.add_section(command)
    for opt in COMMANDS[command]:
        cp.set(command, opt.name, _format_value(opt, cfg[opt.name]))
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / RUN_CONFIG_NAME, "w", encoding="utf-8") as fh:
        cp.write(fh)


class _Progress:
    def __init__(self, json_mode: bool):
        self.json_mode = json_mode

    def emit(self, event: str, **fields):
        if self.json_mode:
            print(json.dumps({"event": event, **fields}, sort_keys=True))
        else:
            tokens = " ".join(f"{k}={v}" for k, v in fields.items())
            print(f"{event} {tokens}".rstrip())


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _thread_count(cfg: dict) -> int:
    # any worker count yields identical results; 0 picks the machine width
    return cfg["threads"] if cfg["threads"] > 0 else (os.cpu_count() or 1)


def _metric_str(value) -> str:
    return "" if value is None else float_token(value)


# ---------------------------------------------------------------------------
# Subcommand implementations

def _cmd_split(cfg, progress):
    out = _out_dir(cfg)
    manifest = load_manifest(cfg["manifest"], strict=cfg["strict"])
    result = split_manifest(manifest, cfg["train_frac"], cfg["val_frac"], cfg["seed"])
    result = rebase_paths(result, Path(cfg["manifest"]).parent, out)
    save_manifest(result, out / "manifest.jsonl")
    counts = {s.value: sum(1 for e in result if e.split == s) for s in Split}
    progress.emit("split", n=len(result), **counts)


def _cmd_trim(cfg, progress):
    out = _out_dir(cfg)
    clip = read_wav(cfg["input"])
    trimmed = trim_silence(clip, TrimConfig(cfg["frame_len"], cfg["threshold"]))
    target = out / Path(cfg["input"]).name
    write_wav(trimmed, target, encoding=cfg["encoding"])
    progress.emit("trim", infile=cfg["input"], outfile=str(target),
                  kept_samples=len(trimmed), dropped_samples=len(clip) - len(trimmed))


def _cmd_augment(cfg, progress):
    out = _out_dir(cfg)
    if cfg["input"]:
        if not cfg["kind"] or cfg["value"] is None:
            raise UsageError("single-file mode needs --kind and --value")
        clip = read_wav(cfg["input"])
        spec = AugmentSpec(AugmentKind(cfg["kind"]), cfg["value"], cfg["seed"])
        target = out / Path(cfg["input"]).name
        write_wav(augment(clip, spec), target)
        progress.emit("augment", outfile=str(target), kind=cfg["kind"], value=cfg["value"])
        return
    if not cfg["manifest"]:
        raise UsageError("augment needs --manifest or --in")
    manifest = load_manifest(cfg["manifest"], strict=cfg["strict"])
    manifest = rebase_paths(manifest, Path(cfg["manifest"]).parent, out)
    ranges = AugmentRanges(
        sigma=(cfg["sigma_min"], cfg["sigma_max"]),
        semitones=(cfg["semitones_min"], cfg["semitones_max"]),
        rate=(cfg["rate_min"], cfg["rate_max"]),
    )
    grown = fan_out(manifest, cfg["specs_per_entry"], ranges, cfg["seed"],
                    out_dir=out, src_dir=out)
    save_manifest(grown, out / "manifest.jsonl")
    progress.emit("augment", originals=len(manifest), total=len(grown))


def _cmd_pool(cfg, progress):
    out = _out_dir(cfg)
    manifest = load_manifest(cfg["manifest"], strict=cfg["strict"])
    base = Path(cfg["manifest"]).parent
    entries = []
    for entry in manifest:
        if entry.embedding_path is None:
            raise DataError(f"entry {entry.id!r} has no embedding to pool")
        src = Path(entry.embedding_path)
        matrix = read_hrf(src if src.is_absolute() else base / src)
        filename = f"{entry.id}.hrf"
        write_hrf(mean_pool(matrix)[None, :], out / filename)
        entries.append(replace(entry, embedding_path=filename))
    save_manifest(Manifest(tuple(entries)), out / "manifest.jsonl")
    progress.emit("pool", n=len(entries))


def _cmd_synth(cfg, progress):
    out = _out_dir(cfg)
    spec = SyntheticSpec(cfg["classes"], cfg["dim"], cfg["per_class"],
                         cfg["sigma"], cfg["margin"], cfg["seed"])
    if cfg["classes"] > 112:
        raise UsageError("synthetic class count is limited to the 112-label codec")
    dataset, means = generate(spec)
    entries = []
    for i, sample_id in enumerate(dataset.ids):
        filename = f"{sample_id}.hrf"
        write_hrf(dataset.X[i][None, :], out / filename)
        entries.append(ManifestEntry(id=sample_id, label=decode_label(int(dataset.y[i])),
                                     embedding_path=filename))
    save_manifest(Manifest(tuple(entries)), out / "manifest.jsonl")
    write_hrf(means, out / "means.hrf")
    progress.emit("synth", n=len(dataset), classes=cfg["classes"], dim=cfg["dim"])


def _infer_classes(cfg, *datasets) -> int:
    if cfg["classes"]:
        return cfg["classes"]
    present = [int(ds.y.max()) for ds in datasets if len(ds)]
    if not present:
        raise DataError("cannot infer the class count from empty datasets")
    return max(present) + 1


def _attack_config(cfg, track_best: bool = True) -> AttackConfig:
    return AttackConfig(
        epsilon=cfg["epsilon"],
        alpha=cfg["alpha"] if cfg["alpha"] > 0 else None,
        steps=cfg["steps"],
        init=cfg["init"],
        init_seed=cfg.get("init_seed", cfg.get("seed", 0)),
        track_best=track_best,
    )


def _cmd_train(cfg, progress):
    out = _out_dir(cfg)
    manifest = load_manifest(cfg["manifest"], strict=cfg["strict"])
    base = Path(cfg["manifest"]).parent
    train_ds = assemble(manifest, Split.TRAIN, base_dir=base)
    val_ds = assemble(manifest, Split.VAL, base_dir=base)
    if not len(train_ds):
        raise DataError("manifest has no train entries")
    n_classes = _infer_classes(cfg, train_ds, val_ds)
    hidden = tuple(cfg["hidden"])
    if len(hidden) != 2:
        raise UsageError("--hidden needs exactly two widths, e.g. 256,128")
    model = init_mlp(train_ds.dim, n_classes, hidden=hidden,
                     dropout_rate=cfg["dropout"], seed=cfg["seed"])
    attack = _attack_config(cfg) if cfg["adversarial"] else None

    rows = []

    def on_epoch(row):
        rows.append(row)
        progress.emit("epoch", epoch=row.epoch, train_loss=row.train_loss,
                      train_accuracy=row.train_accuracy,
                      val_loss=row.val_loss, val_accuracy=row.val_accuracy)

    train(model, train_ds, val_ds=val_ds if len(val_ds) else None,
          epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
          attack=attack, lr=cfg["lr"], on_epoch=on_epoch)

    meta = {
        "seed": cfg["seed"],
        "training": {
            "epochs": cfg["epochs"], "batch_size": cfg["batch_size"], "lr": cfg["lr"],
            "adversarial": bool(cfg["adversarial"]),
            "epsilon": cfg["epsilon"] if cfg["adversarial"] else 0.0,
            "steps": cfg["steps"], "init": cfg["init"],
        },
    }
    save_checkpoint(model, out / "model.ckpt", meta)
    lines = ["epoch,train_loss,train_accuracy,val_loss,val_accuracy"]
    for row in rows:
        lines.append(
            f"{row.epoch},{float_token(row.train_loss)},{float_token(row.train_accuracy)},"
            f"{_metric_str(row.val_loss)},{_metric_str(row.val_accuracy)}"
        )
    (out / "metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    progress.emit("trained", checkpoint=str(out / "model.ckpt"), epochs=cfg["epochs"])


def _load_split_dataset(cfg):
    manifest = load_manifest(cfg["manifest"], strict=cfg["strict"])
    split = Split(cfg["split"]) if cfg["split"] != "all" else None
    dataset = assemble(manifest, split, base_dir=Path(cfg["manifest"]).parent)
    if not len(dataset):
        raise DataError(f"no entries in split {cfg['split']!r}")
    return dataset


def _cmd_attack(cfg, progress):
    out = _out_dir(cfg)
    model, _ = load_checkpoint(cfg["model"])
    dataset = _load_split_dataset(cfg)
    attack_cfg = _attack_config(cfg)
    perturbed = np.empty((len(dataset), dataset.dim), dtype=np.float64)
    clean_correct = 0
    robust_correct = 0
    loss_sum = 0.0
    for start, stop in batch_slices(len(dataset), cfg["batch_size"]):
        X = dataset.X[start:stop]
        y = dataset.y[start:stop]
        pert = pgd(model, Batch(X, y), attack_cfg)
        x_adv = X + pert.delta
        perturbed[start:stop] = x_adv
        clean_correct += int((model.predict(X) == y).sum())
        robust_correct += int((model.predict(x_adv) == y).sum())
        loss_sum += float(pert.per_example_loss.sum())
    write_hrf(perturbed.astype(np.float32), out / "perturbed.hrf")
    summary = {
        "n": len(dataset),
        "epsilon": cfg["epsilon"],
        "steps": cfg["steps"],
        "clean_accuracy": clean_correct / len(dataset),
        "robust_accuracy": robust_correct / len(dataset),
        "achieved_loss": loss_sum / len(dataset),
    }
    (out / "attack.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    progress.emit("attack", **summary)


def _cmd_eval(cfg, progress):
    out = _out_dir(cfg)
    model, _ = load_checkpoint(cfg["model"])
    dataset = _load_split_dataset(cfg)
    report = evaluate(model, dataset, batch_size=cfg["batch_size"], threads=_thread_count(cfg))
    (out / "report.json").write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    lines = ["class_id,n,accuracy"]
    row_sums = report.confusion.sum(axis=1)
    for class_id in range(len(report.per_class_accuracy)):
        acc = report.per_class_accuracy[class_id]
        lines.append(
            f"{class_id},{int(row_sums[class_id])},"
            f"{'' if np.isnan(acc) else float_token(acc)}"
        )
    (out / "per_class.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    conf_lines = [",".join(str(int(v)) for v in row) for row in report.confusion]
    (out / "confusion.csv").write_text("\n".join(conf_lines) + "\n", encoding="utf-8")
    progress.emit("eval", n=report.n, clean_accuracy=report.clean_accuracy,
                  macro_average=report.macro_average)


def _cmd_sweep(cfg, progress):
    out = _out_dir(cfg)
    standard, _ = load_checkpoint(cfg["standard"])
    adversarial, _ = load_checkpoint(cfg["adversarial"])
    dataset = _load_split_dataset(cfg)
    base_cfg = AttackConfig(
        epsilon=0.0,
        alpha=cfg["alpha"] if cfg["alpha"] > 0 else None,
        steps=cfg["steps"], init=cfg["init"], init_seed=cfg["init_seed"],
    )

    def on_row(row):
        progress.emit("sweep_row", epsilon=row.epsilon, acc_standard=row.acc_standard,
                      acc_adversarial=row.acc_adversarial)

    result = sweep(standard, adversarial, dataset, cfg["epsilons"], base_cfg,
                   batch_size=cfg["batch_size"], threads=_thread_count(cfg), on_row=on_row)
    result.save_csv(out / "sweep.csv")
    if cfg["svg"]:
        (out / "sweep.svg").write_text(sweep_svg(result), encoding="utf-8")
    progress.emit("sweep", rows=len(result.rows), out=str(out / "sweep.csv"))


def _cmd_report(cfg, progress):
    out = _out_dir(cfg)
    eval_report = None
    sweep_result = None
    context = {}
    if cfg["eval"]:
        eval_report = EvalReport.from_json_dict(
            json.loads(Path(cfg["eval"]).read_text(encoding="utf-8"))
        )
        context["eval_source"] = cfg["eval"]
    if cfg["sweep"]:
        sweep_result = SweepResult.load_csv(cfg["sweep"])
        context["sweep_source"] = cfg["sweep"]
    if eval_report is None and sweep_result is None:
        raise UsageError("report needs --eval and/or --sweep")
    doc = render_report(eval_report, sweep_result, context)
    write_report(doc, out)
    if cfg["svg"] and sweep_result is not None:
        (out / "sweep.svg").write_text(sweep_svg(sweep_result), encoding="utf-8")
    progress.emit("report", out=str(out / "report.json"))


_HANDLERS = {
    "split": _cmd_split,
    "trim": _cmd_trim,
    "augment": _cmd_augment,
    "pool": _cmd_pool,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "attack": _cmd_attack,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    json_mode = "--json" in argv
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        cfg = _resolve(args.command, args)
        progress = _Progress(args.json)
        handler = _HANDLERS[args.command]
        handler(cfg, progress)
        if "out" in cfg and cfg["out"]:
            _write_run_config(args.command, cfg, Path(cfg["out"]))
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        _emit_error(exc, json_mode)
        return 1
    except NumericError as exc:
        _emit_error(exc, json_mode)
        return 3
    except HoroufError as exc:
        _emit_error(exc, json_mode)
        return 2


def _emit_error(exc: Exception, json_mode: bool) -> None:
    if json_mode:
        line = json.dumps(
            {"event": "error", "type": exc.__class__.__name__, "message": str(exc)},
            sort_keys=True,
        )
        print(line, file=sys.stderr)
    else:
        print(f"horouf: error: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())

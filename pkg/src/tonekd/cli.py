"""Command-line front end: datagen, train, evaluate, report.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
failure (training divergence).  Diagnostics go to stderr; results go to
stdout and the requested output files.  Every knob beyond the documented
flags is reachable through --set key=value, backed by the same schema as
config files.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import config as config_mod
from . import corpus as corpus_mod
from . import evaluation, models, training
from .corpus import CorpusConfig
from .quant import Codebook
from .tensor import NumericsError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageExit(Exception):
    def __init__(self, message: str):
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on our exit-code contract."""

    def error(self, message):
        raise _UsageExit(message)


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="config file of key = value lines")
    sub.add_argument("--out", help="output path (file or directory, per subcommand)")
    sub.add_argument("--stage", help="training stage: teacher | student_base | distill")
    sub.add_argument("--seed", help="training seed")
    sub.add_argument("--snr-db", help="noise mixing SNR in dB")
    sub.add_argument("--lambda", dest="lam", help="distillation loss weight")
    sub.add_argument("--mu", help="coalescence loss weight")
    sub.add_argument("--alpha", help="coalescence early-frame decay rate")
    sub.add_argument("--tau", help="distillation temperature")
    sub.add_argument("--epochs", help="epoch count override")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="generic config override")


def build_parser() -> _Parser:
    parser = _Parser(prog="tonekd", description=__doc__)
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, helptext in (
            ("datagen", "generate the synthetic corpus file"),
            ("train", "run one training stage"),
            ("evaluate", "compute metrics for a checkpoint"),
            ("report", "render the comparison table from metrics files")):
        _add_common_flags(subs.add_parser(name, help=helptext))
    return parser


_FLAG_KEYS = {
    "stage": "stage",
    "seed": "seed",
    "snr_db": "snr_db",
    "lam": "lambda",
    "mu": "mu",
    "alpha": "alpha",
    "tau": "tau",
    "epochs": "epochs",
}


def _build_config(args) -> dict:
    cfg = config_mod.defaults()
    if args.config:
        config_mod.load_file(args.config, cfg)
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr)
        if value is not None:
            config_mod.set_key(cfg, key, value)
    config_mod.apply_overrides(cfg, args.overrides)
    return cfg


def _cmd_datagen(args, cfg: dict) -> int:
    out_path = args.out or cfg["corpus"]
    ccfg = CorpusConfig(
        n_train=cfg["data.n_train"], n_val=cfg["data.n_val"],
        n_test=cfg["data.n_test"], min_tokens=cfg["data.min_tokens"],
        max_tokens=cfg["data.max_tokens"], master_seed=cfg["data.seed"])
    built = corpus_mod.build_corpus(ccfg)
    corpus_mod.write_corpus(built, out_path)
    print(f"wrote {out_path}: splits {built.counts}")
    return EXIT_OK


def _cmd_train(args, cfg: dict) -> int:
    if args.out:
        cfg["out_dir"] = args.out
    tcfg = training.TrainConfig.from_dict(cfg)
    result = training.run_stage(tcfg)
    print(f"stage {result.stage}: best validation TER "
          f"{result.best_val_ter:.4f} -> {result.checkpoint_path}")
    return EXIT_OK


def _cmd_evaluate(args, cfg: dict) -> int:
    model_path = cfg["eval.model"]
    if not model_path:
        raise config_mod.ConfigError(
            "evaluate needs a checkpoint: --set eval.model=PATH")
    if not os.path.exists(model_path):
        raise training.PrerequisiteError(f"checkpoint not found: {model_path}")
    encoder, _ = models.load_model(model_path)
    data = corpus_mod.read_corpus(cfg["corpus"])
    metrics = evaluation.evaluate_model(encoder, data, cfg["snr_db"],
                                        cfg["eval.repetitions"])
    name = cfg["eval.name"] or os.path.splitext(os.path.basename(model_path))[0]
    payload = {
        "model_name": name,
        "params_m": f"{metrics.total_params / 1e6:.6f}",
        "total_params": metrics.total_params,
        "trainable_params": metrics.trainable_params,
        "wer_clean": repr(metrics.wer_clean),
        "wer_noisy": repr(metrics.wer_noisy),
        "rtf": repr(metrics.rtf),
        "param_memory_mb": repr(metrics.param_memory_mb),
    }
    for key, value in payload.items():
        print(f"{key}\t{value}")
    if args.out:
        evaluation.write_metrics(args.out, payload)
    return EXIT_OK


def _cmd_report(args, cfg: dict) -> int:
    inputs = [p for p in cfg["report.inputs"].split(",") if p]
    if not inputs:
        raise config_mod.ConfigError(
            "report needs metrics files: --set report.inputs=a.tsv,b.tsv")
    rows = []
    for path in inputs:
        if not os.path.exists(path):
            raise training.PrerequisiteError(f"metrics file not found: {path}")
        m = evaluation.read_metrics(path)
        rows.append((m["model_name"], float(m["params_m"]),
                     float(m["wer_clean"]), float(m["wer_noisy"]),
                     float(m["rtf"]), float(m["param_memory_mb"])))
    table = evaluation.emit_report(rows)
    print("token error rates reported in the WER columns", file=sys.stderr)
    sys.stdout.write(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(table)
    return EXIT_OK


_COMMANDS = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help lands here with code 0
        return int(exc.code or 0)
    try:
        cfg = _build_config(args)
        return _COMMANDS[args.subcommand](args, cfg)
    except (training.TrainingDiverged, NumericsError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (config_mod.ConfigError, corpus_mod.CorpusFormatError,
            training.PrerequisiteError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

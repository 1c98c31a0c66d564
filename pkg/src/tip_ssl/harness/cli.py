"""Command-line entry point.

    tip-ssl [--config FILE] [--seed N] [--out DIR] <command> [options]

Commands: synth, pretrain, finetune, eval, impute, sweep, gradcheck.
Exit status: 0 success, 1 configuration/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from ..data import (
    DegenerateColumnError,
    PairedDataset,
    ScenarioConfigError,
    SchemaError,
    feature_importance,
    synth_generate,
    write_csv,
)
from ..data.synth import BatchConfigError
from ..model import ModelConfigError
from ..ssl import PretrainConfigError, pretrain_loop, trace_to_jsonl
from ..vision import VisionConfigError
from .checkpoint import Checkpoint, checkpoint_from_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .evaluate import (
    EvalReport,
    evaluate_classification,
    evaluate_imputation,
    mean_impute_baseline,
    reports_to_json,
    reports_to_table,
    run_missingness_sweep,
)
from .finetune import finetune

CONFIG_ERRORS = (ConfigError, ModelConfigError, PretrainConfigError, VisionConfigError, ScenarioConfigError,
                 SchemaError, DegenerateColumnError, BatchConfigError)


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tip-ssl", description="Tabular-image self-supervised pre-training on synthetic data.")
    p.add_argument("--config", type=Path, help="flat key = value configuration file")
    p.add_argument("--seed", type=_u64, help="overrides every seed in the configuration")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", help="write the synthetic dataset (CSV, schema JSON, image container)")
    sub.add_parser("pretrain", help="pre-train and write a checkpoint and loss trace")

    ft = sub.add_parser("finetune", help="attach classifiers and fine-tune a pre-trained checkpoint")
    ft.add_argument("--checkpoint", type=Path, help="default: <out>/pretrain.ckpt")
    ft.add_argument("--mode", choices=("linear_probe", "full"))

    ev = sub.add_parser("eval", help="classification (if fine-tuned) and imputation reports")
    ev.add_argument("--checkpoint", type=Path, help="default: <out>/finetune.ckpt, else <out>/pretrain.ckpt")
    ev.add_argument("--sigma", type=float, default=0.5, help="missing rate for the imputation report")

    im = sub.add_parser("impute", help="imputation RMSE against the mean baseline")
    im.add_argument("--checkpoint", type=Path, help="default: <out>/pretrain.ckpt")
    im.add_argument("--sigmas", type=_floats, default=[0.1, 0.3, 0.5])
    im.add_argument("--no-mask-categorical", action="store_true",
                    help="leave categorical cells visible (by default they are all masked)")

    sw = sub.add_parser("sweep", help="classification under missingness scenarios")
    sw.add_argument("--checkpoint", type=Path, help="default: <out>/finetune.ckpt")
    sw.add_argument("--kinds", default="RVM,RFM,MIFM,LIFM")
    sw.add_argument("--sigmas", type=_floats, default=[0.0, 0.25, 0.5])
    sw.add_argument("--seeds", type=_ints, default=[0, 1, 2])

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--n-seeds", type=int, default=10)
    return p


# -- helpers ----------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def _dataset(cfg: RunConfig) -> PairedDataset:
    return synth_generate(cfg.synth)


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def _write_reports(out: Path, stem: str, reports: list[EvalReport]) -> None:
    _write(out, f"{stem}.json", reports_to_json(reports))
    _write(out, f"{stem}.txt", reports_to_table(reports))
    print(reports_to_table(reports), end="")


def _load(path: Path):
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    ckpt = load_checkpoint(path)
    model, cfg, _ = model_from_checkpoint(ckpt)
    return model, cfg, ckpt


# -- commands ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    data = _dataset(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_csv(args.out / "tabular.csv", data.schema, data.values, data.labels)
    _write(args.out, "schema.json", data.schema.to_json() + "\n")
    splits = {k: v.tolist() for k, v in data.splits.items()}
    save_checkpoint(args.out / "images.ckpt",
                    Checkpoint({"images": data.images}, cfg.to_text(), {"splits": splits}))
    print(f"wrote {len(data)} samples to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from ..model import TIPModel

    cfg = _run_config(args)
    data = _dataset(cfg)
    model = TIPModel(cfg.model, data.schema, seed=cfg.pretrain.seed)

    def log(rec):
        if rec["step"] % 10 == 0:
            print(f"epoch {rec['epoch']:3d} step {rec['step']:5d} loss {rec['l_total']:.4f}", flush=True)

    res = pretrain_loop(data.split("train"), model, cfg.pretrain, log=log)
    ckpt = checkpoint_from_model(model, cfg, res.optimizer, {"stage": "pretrain",
                                                             "epoch_losses": res.epoch_losses})
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / "pretrain.ckpt", ckpt)
    _write(args.out, "loss_trace.jsonl", trace_to_jsonl(res.trace))
    _write(args.out, "config.txt", cfg.to_text())
    print(f"pre-trained {len(res.trace)} steps; checkpoint {args.out / 'pretrain.ckpt'}")
    return 0


def cmd_finetune(args) -> int:
    model, cfg, _ = _load(args.checkpoint or args.out / "pretrain.ckpt")
    # the dataset and backbone come from the checkpoint; only fine-tuning settings change here
    ft_cfg = cfg.finetune
    if args.seed is not None:
        ft_cfg = replace(ft_cfg, seed=args.seed)
    if args.mode:
        ft_cfg = replace(ft_cfg, mode=args.mode)
    cfg = replace(cfg, finetune=ft_cfg)
    data = _dataset(cfg)
    res = finetune(model, data.split("train"), data.split("val"), ft_cfg)
    ckpt = checkpoint_from_model(model, cfg, meta={"stage": "finetune", "metric": res.metric,
                                                   "best_value": res.best_value, "best_epoch": res.best_epoch})
    args.out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out / "finetune.ckpt", ckpt)
    _write(args.out, "finetune_history.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in res.history))
    print(f"best validation {res.metric} {res.best_value:.4f} at epoch {res.best_epoch}")
    return 0


def _default_eval_ckpt(out: Path) -> Path:
    ft = out / "finetune.ckpt"
    return ft if ft.exists() else out / "pretrain.ckpt"


def cmd_eval(args) -> int:
    model, cfg, ckpt = _load(args.checkpoint or _default_eval_ckpt(args.out))
    data = _dataset(cfg)
    test, digest, seed = data.split("test"), ckpt.digest, cfg.pretrain.seed
    reports = []
    if model.n_classes is not None:
        reports.append(evaluate_classification(model, test, seed=seed, config_digest=digest))
    reports += evaluate_imputation(model, test, [args.sigma], seed=seed, config_digest=digest)
    reports.append(mean_impute_baseline(test, args.sigma, seed=seed, config_digest=digest))
    _write_reports(args.out, "eval_report", reports)
    return 0


def cmd_impute(args) -> int:
    model, cfg, ckpt = _load(args.checkpoint or args.out / "pretrain.ckpt")
    test = _dataset(cfg).split("test")
    mask_cat = not args.no_mask_categorical
    seed, digest = cfg.pretrain.seed, ckpt.digest
    reports = evaluate_imputation(model, test, args.sigmas, mask_cat, seed=seed, config_digest=digest)
    reports += [mean_impute_baseline(test, s, seed=seed, mask_categorical=mask_cat, config_digest=digest)
                for s in args.sigmas]
    _write_reports(args.out, "impute_report", reports)
    return 0


def cmd_sweep(args) -> int:
    model, cfg, ckpt = _load(args.checkpoint or args.out / "finetune.ckpt")
    if model.n_classes is None:
        raise ConfigError("sweep needs a fine-tuned checkpoint")
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    data = _dataset(cfg)
    train = data.split("train")
    ranking = None
    if {"MIFM", "LIFM"} & set(kinds):
        ranking, _ = feature_importance(train.values, train.labels, data.schema, seed=cfg.pretrain.seed)
    reports = run_missingness_sweep(model, data.split("test"), kinds, args.sigmas, args.seeds,
                                    importance=ranking, config_digest=ckpt.digest)
    _write_reports(args.out, "sweep_report", reports)
    return 0


def cmd_gradcheck(args) -> int:
    from ..gradsuite import run_suite

    def log(r):
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.case:20s} seed {r.seed}  max rel err {r.worst:.2e}")

    results, seconds = run_suite(range(args.n_seeds), log=log)
    failed = [r for r in results if not r.passed]
    doc = [{"case": r.case, "seed": r.seed, "max_rel_error": r.worst, "passed": r.passed} for r in results]
    _write(args.out, "gradcheck.json", json.dumps(doc, indent=2) + "\n")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {seconds:.1f}s")
    return 0 if not failed else 2


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "impute": cmd_impute,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except CONFIG_ERRORS as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

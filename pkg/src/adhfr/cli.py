"""``adhfr`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numerical
failure (non-finite values or a gradient check over tolerance).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import NumericalError, primitive_suite
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, format_config, parse_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ENV = "ADHFR_OUTPUT_DIR"
GRAD_TOLERANCE = 1e-4

logger = logging.getLogger("adhfr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUTPUT_ENV} or current directory)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="adhfr", description="NIR-VIS face hallucination and adversarial feature learning")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="render a synthetic paired-modality dataset")
    _common(p)
    p.add_argument("--identities", type=int)
    p.add_argument("--vis", type=int, help="VIS images per identity")
    p.add_argument("--nir", type=int, help="NIR images per identity")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train-hal", help="train the NIR<->VIS generators")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory (from synth)")
    p.add_argument("--fold", type=int, help="restrict training to this fold's training identities")

    p = sub.add_parser("train-feat", help="pretrain and finetune the feature extractor")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--hal", type=Path, help="hallucination checkpoint (hallucination presets only)")

    p = sub.add_parser("hallucinate", help="translate NIR images to VIS and write PPM grids")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--hal", type=Path, required=True)
    p.add_argument("--limit", type=int, default=16, help="number of NIR images to translate")

    p = sub.add_parser("eval", help="evaluate a feature checkpoint on a fold protocol")
    _common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--hal", type=Path, help="translate probes with this G_V checkpoint first")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and loss")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="collate report.csv files into an ablation table")
    p.add_argument("runs", nargs="+", type=Path, help="run directories containing report.csv")
    p.add_argument("--out", type=Path, help="also write the table as CSV here")
    return ap


def _config(args, extra: dict | None = None) -> ExperimentConfig:
    overrides = dict(extra or {})
    for kv in args.set:
        if "=" not in kv:
            raise UsageError(f"--set expects KEY=VALUE, got {kv!r}")
        key, value = kv.split("=", 1)
        overrides[key.strip()] = value.strip()
    text = args.config.read_text() if args.config else ""
    return parse_config(text, overrides)


def _out_dir(args) -> Path:
    out = args.out or Path(os.environ.get(OUTPUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path: Path):
    from .synth import read_dataset

    return read_dataset(path)


def _fold(dataset, cfg: ExperimentConfig, index: int):
    from .synth import split_folds

    folds = split_folds(dataset, cfg.folds, cfg.seed)
    if not 0 <= index < len(folds):
        raise ConfigError(f"fold {index} out of range for {len(folds)} folds")
    return folds[index]


def _load_g_v(path: Path, cfg: ExperimentConfig):
    from .hallucination import build_hallucination_models

    models = build_hallucination_models(cfg)
    models.load_state_dict(load_checkpoint(path))
    return models.g_v


def cmd_synth(args) -> int:
    from .synth import make_dataset, write_dataset

    flags = {k: v for k, v in (("identities", args.identities), ("vis_per_id", args.vis),
                               ("nir_per_id", args.nir), ("seed", args.seed)) if v is not None}
    cfg = _config(args, flags)
    out = _out_dir(args)
    ds = make_dataset(cfg.identities, cfg.vis_per_id, cfg.nir_per_id, cfg.seed,
                      size=cfg.image_size, identity_seed=cfg.identity_seed)
    manifest = write_dataset(ds, out)
    (out / "config.cfg").write_text(format_config(cfg))
    print(f"wrote {len(ds)} images and {manifest}")
    return EXIT_OK


def cmd_train_hal(args) -> int:
    from .experiment import history_csv
    from .hallucination import HISTORY_FIELDS, train_hallucination

    cfg = _config(args)
    ds = _load_dataset(args.data)
    ids = _fold(ds, cfg, args.fold).train_ids if args.fold is not None else None
    models = train_hallucination(ds, cfg, identity_ids=ids)
    out = _out_dir(args)
    save_checkpoint(models.state_dict(), out / "hallucination.ckpt")
    (out / "hal_losses.csv").write_text(history_csv(models.history, HISTORY_FIELDS))
    (out / "config.cfg").write_text(format_config(cfg))
    last = models.history[-1]
    print(f"hallucination: cyc={last['cyc']:.4f} intensity={last['intensity']:.4f}")
    return EXIT_OK


def cmd_train_feat(args) -> int:
    from .experiment import history_csv
    from .features import HISTORY_FIELDS, train_features

    cfg = _config(args)
    if cfg.uses_hallucination != (args.hal is not None):
        raise ConfigError(f"preset {cfg.preset!r} {'requires' if cfg.uses_hallucination else 'does not take'} --hal")
    ds = _load_dataset(args.data)
    fold = _fold(ds, cfg, args.fold)
    g_v = _load_g_v(args.hal, cfg) if args.hal else None
    models = train_features(ds, cfg, fold.train_ids, g_v=g_v)
    out = _out_dir(args)
    save_checkpoint(models.state_dict(), out / "features.ckpt")
    (out / "feat_losses.csv").write_text(history_csv(models.history, HISTORY_FIELDS))
    (out / "config.cfg").write_text(format_config(cfg))
    print(f"features[{cfg.preset}]: final cls={models.history[-1]['cls']:.4f}")
    return EXIT_OK


def cmd_hallucinate(args) -> int:
    from .hallucination import sample_ycbcr, translate_batch
    from .synth import NIR
    from .imaging import Image, tile_grid, write_pnm, ycbcr_to_rgb_array

    cfg = _config(args)
    ds = [s for s in _load_dataset(args.data) if s.modality == NIR][: args.limit]
    if not ds:
        raise ConfigError("dataset has no NIR images")
    g_v = _load_g_v(args.hal, cfg)
    ycc = np.stack([sample_ycbcr(s) for s in ds])
    eyes = np.array([s.eye_centers for s in ds], dtype=np.int64)
    fake = translate_batch(g_v, ycc, eyes)
    out = _out_dir(args)
    rows = []
    for i, s in enumerate(ds):
        gen = Image(ycbcr_to_rgb_array(fake[i].transpose(1, 2, 0)), "rgb")
        write_pnm(out / f"hal_{i:03d}_id{s.identity_id:04d}.ppm", gen)
        rows.append([s.image, gen])
    write_pnm(out / "hallucinated_grid.ppm", tile_grid(rows))
    print(f"translated {len(ds)} NIR images into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import ScoreMatrix, evaluate_scores, protocol_features, report_csv, roc_csv, roc_svg
    from .features import build_feature_models

    cfg = _config(args)
    ds = _load_dataset(args.data)
    fold = _fold(ds, cfg, args.fold)
    extractor = build_feature_models(cfg, fold.train_ids).extractor
    state = load_checkpoint(args.features)
    extractor.load_state_dict({k[len("extractor."):]: v for k, v in state.items() if k.startswith("extractor.")})
    g_v = _load_g_v(args.hal, cfg) if args.hal else None
    gf, gid, pf, pid = protocol_features(extractor, ds, fold, g_v)
    report = evaluate_scores(ScoreMatrix.from_features(gf, gid, pf, pid))
    out = _out_dir(args)
    (out / "report.csv").write_text(report_csv(report))
    (out / "roc.csv").write_text(roc_csv(report.roc))
    (out / "roc.svg").write_text(roc_svg(report.roc, f"{cfg.preset}, fold {fold.fold}"))
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["identity_id", "modality"] + [f"f{i}" for i in range(gf.shape[1])])
        for feats, ids, modality in ((gf, gid, "VIS"), (pf, pid, "NIR")):
            for f, i in zip(feats, ids):
                w.writerow([int(i), modality] + [repr(float(v)) for v in f])
    for key, value in report.metrics().items():
        print(f"{key}: {value:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .losscheck import loss_suite

    results = {**primitive_suite(points=args.points, seed=args.seed), **loss_suite(points=args.points, seed=args.seed)}
    failed = [k for k, v in results.items() if not v < GRAD_TOLERANCE]
    for name, err in results.items():
        print(f"{name:28s} {err:.3e}  {'FAIL' if name in failed else 'ok'}")
    print(f"{len(results) - len(failed)}/{len(results)} within {GRAD_TOLERANCE:g}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_report(args) -> int:
    from .evaluation import read_report_csv

    rows = []
    for run in args.runs:
        report_path = run / "report.csv" if run.is_dir() else run
        if not report_path.exists():
            raise ConfigError(f"{report_path} not found")
        cfg_path = report_path.parent / "config.cfg"
        preset = parse_config(cfg_path.read_text()).preset if cfg_path.exists() else report_path.parent.name
        table = read_report_csv(report_path)
        rows.append((preset, table["mean"], table["std"]))
    keys = list(rows[0][1])
    header = ["preset"] + keys
    lines = ["  ".join(f"{h:>18s}" for h in header)]
    for preset, mean, std in rows:
        cells = [f"{100 * mean[k]:6.2f} +- {100 * std[k]:5.2f}" for k in keys]
        lines.append("  ".join(f"{c:>18s}" for c in [preset] + cells))
    print("\n".join(lines))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["preset"] + [f"{k}_{s}" for k in keys for s in ("mean", "std")])
            for preset, mean, std in rows:
                w.writerow([preset] + [repr(v) for k in keys for v in (mean[k], std[k])])
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train-hal": cmd_train_hal,
    "train-feat": cmd_train_feat,
    "hallucinate": cmd_hallucinate,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"adhfr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"adhfr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"adhfr: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Ablation runs: presets x seeds x folds on the synthetic protocol.

Within one (seed, fold) every preset starts from the same softmax-pretrained
extractor, and the hallucination presets share one trained G_V.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .config import ExperimentConfig, format_config
from .evaluation import EvalReport, aggregate_folds, evaluate_fold, report_csv, roc_csv, roc_svg
from .features import HISTORY_FIELDS as FEATURE_FIELDS
from .features import PRESET_TERMS, build_feature_models, pretrain, train_features
from .hallucination import HISTORY_FIELDS as HAL_FIELDS
from .hallucination import train_hallucination
from .synth import make_dataset, split_folds

logger = logging.getLogger(__name__)

ABLATION_PRESETS = ("softmax", "adfl", "hallucination+adfl")


def history_csv(history: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in history:
        w.writerow([v if isinstance(v, str) else repr(v) for v in (row[c] for c in columns)])
    return buf.getvalue()


def dataset_for(config: ExperimentConfig):
    return make_dataset(config.identities, config.vis_per_id, config.nir_per_id, config.seed,
                        size=config.image_size, identity_seed=config.identity_seed)


@dataclass
class AblationResult:
    reports: dict[str, EvalReport]  # preset -> aggregate over seeds x folds
    per_seed: dict[tuple[str, int], EvalReport] = field(default_factory=dict)
    histories: dict[tuple[str, int, int], list[dict]] = field(default_factory=dict)
    hal_histories: dict[tuple[int, int], list[dict]] = field(default_factory=dict)

    def rank1_table(self) -> dict[str, float]:
        return {p: r.rank1 for p, r in self.reports.items()}


def run_seed(config: ExperimentConfig, presets: Sequence[str], result: AblationResult,
             out_dir: Path | None = None) -> None:
    ds = dataset_for(config)
    folds = split_folds(ds, config.folds, config.seed)
    need_hal = any(PRESET_TERMS[p].hallucinate for p in presets)
    fold_reports: dict[str, list[EvalReport]] = {p: [] for p in presets}
    for fold in folds:
        g_v = None
        if need_hal:
            hal = train_hallucination(ds, config, identity_ids=fold.train_ids)
            result.hal_histories[(config.seed, fold.fold)] = hal.history
            g_v = hal.g_v
            if out_dir is not None:
                d = out_dir / f"seed{config.seed}" / f"fold{fold.fold}"
                d.mkdir(parents=True, exist_ok=True)
                save_checkpoint(hal.state_dict(), d / "hallucination.ckpt")
                (d / "hal_losses.csv").write_text(history_csv(hal.history, HAL_FIELDS))
        base = build_feature_models(config, fold.train_ids)
        pretrain(base, ds, config)
        pre_state = base.state_dict()
        for preset in presets:
            cfg = config.replace(preset=preset)
            hal_gen = g_v if PRESET_TERMS[preset].hallucinate else None
            models = train_features(ds, cfg, fold.train_ids, g_v=hal_gen, pretrained=pre_state)
            models.history[:0] = base.history
            report = evaluate_fold(models.extractor, ds, fold, g_v=hal_gen)
            fold_reports[preset].append(report)
            result.histories[(preset, config.seed, fold.fold)] = models.history
            logger.info("seed=%d fold=%d %s rank1=%.4f", config.seed, fold.fold, preset, report.rank1)
            if out_dir is not None:
                d = out_dir / f"seed{config.seed}" / f"fold{fold.fold}" / preset
                d.mkdir(parents=True, exist_ok=True)
                save_checkpoint(models.state_dict(), d / "features.ckpt")
                (d / "feat_losses.csv").write_text(history_csv(models.history, FEATURE_FIELDS))
    for preset in presets:
        agg = aggregate_folds(fold_reports[preset])
        result.per_seed[(preset, config.seed)] = agg
        if out_dir is not None:
            d = out_dir / f"seed{config.seed}" / preset
            d.mkdir(parents=True, exist_ok=True)
            (d / "config.cfg").write_text(format_config(config.replace(preset=preset)))
            (d / "report.csv").write_text(report_csv(agg))
            (d / "roc.csv").write_text(roc_csv(agg.roc))
            (d / "roc.svg").write_text(roc_svg(agg.roc, f"{preset} (seed {config.seed})"))


def run_ablation(config: ExperimentConfig, presets: Sequence[str] = ABLATION_PRESETS,
                 seeds: Sequence[int] = (0, 1, 2), out_dir: str | Path | None = None) -> AblationResult:
    """Train and evaluate every preset for every seed; reports average all seed x fold runs."""
    out = Path(out_dir) if out_dir is not None else None
    result = AblationResult(reports={})
    for seed in seeds:
        run_seed(config.replace(seed=seed), presets, result, out)
    for preset in presets:
        folds = [f for s in seeds for f in result.per_seed[(preset, s)].folds]
        result.reports[preset] = aggregate_folds(folds)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for preset, rep in result.reports.items():
            (out / f"{preset}.csv").write_text(report_csv(rep))
    return result


def main(argv: Sequence[str] | None = None) -> int:
    from .config import parse_config

    ap = argparse.ArgumentParser(prog="python -m adhfr.experiment", description="run the preset ablation")
    ap.add_argument("--config", type=Path)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--presets", nargs="+", default=list(ABLATION_PRESETS))
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    overrides = dict(kv.split("=", 1) for kv in args.set)
    cfg = parse_config(args.config.read_text() if args.config else "", overrides)
    result = run_ablation(cfg, args.presets, args.seeds, args.out)
    for preset, r1 in result.rank1_table().items():
        print(f"{preset:20s} rank1={r1:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

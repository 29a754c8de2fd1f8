"""Closed-set cross-modal evaluation: Rank-1, ROC and VR@FAR."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

FAR_TARGETS = (1e-2, 1e-3, 1e-4)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(probes: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """(P, G) cosine similarities between rows."""
    p = np.asarray(probes, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    pn = np.linalg.norm(p, axis=1, keepdims=True)
    gn = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(pn == 0) or np.any(gn == 0):
        raise ValueError("cosine similarity of a zero vector is undefined")
    return np.clip((p / pn) @ (g / gn).T, -1.0, 1.0)


@dataclass(frozen=True)
class ScoreMatrix:
    gallery_ids: np.ndarray
    probe_ids: np.ndarray
    scores: np.ndarray  # probes x gallery

    def __post_init__(self):
        g = np.asarray(self.gallery_ids)
        p = np.asarray(self.probe_ids)
        s = np.asarray(self.scores, dtype=np.float64)
        if s.shape != (len(p), len(g)):
            raise ValueError(f"score matrix {s.shape} does not match {len(p)} probes x {len(g)} gallery")
        if s.size and (s.min() < -1 - 1e-12 or s.max() > 1 + 1e-12):
            raise ValueError("similarities must lie in [-1, 1]")
        missing = set(p.tolist()) - set(g.tolist())
        if missing:
            raise ValueError(f"probe identities {sorted(missing)[:5]} are absent from the gallery")
        object.__setattr__(self, "gallery_ids", g)
        object.__setattr__(self, "probe_ids", p)
        object.__setattr__(self, "scores", s)

    @classmethod
    def from_features(cls, gallery_feats, gallery_ids, probe_feats, probe_ids) -> "ScoreMatrix":
        return cls(np.asarray(gallery_ids), np.asarray(probe_ids), cosine_matrix(probe_feats, gallery_feats))

    def genuine_mask(self) -> np.ndarray:
        return self.probe_ids[:, None] == self.gallery_ids[None, :]


def rank1(scores: ScoreMatrix) -> float:
    """Fraction of probes whose best gallery match is a mate (argmax keeps the lowest index on ties)."""
    if scores.scores.size == 0:
        raise ValueError("empty score matrix")
    best = np.argmax(scores.scores, axis=1)
    return float(np.mean(scores.gallery_ids[best] == scores.probe_ids))


def _split_pairs(scores: ScoreMatrix) -> tuple[np.ndarray, np.ndarray]:
    mask = scores.genuine_mask()
    gen, imp = scores.scores[mask], scores.scores[~mask]
    if gen.size == 0 or imp.size == 0:
        raise ValueError("need at least one genuine and one impostor pair")
    return gen, imp


def roc_and_vr(scores: ScoreMatrix, far_targets: Sequence[float] = FAR_TARGETS):
    """ROC as an (m, 2) array of (FAR, VR) and the VR at each FAR target.

    A pair is accepted iff its score is >= tau. For a target, tau is the
    smallest impostor score whose FAR is within the target; when no impostor
    score qualifies, tau sits just above the highest impostor score.
    """
    gen, imp = _split_pairs(scores)
    gen_sorted, imp_sorted = np.sort(gen), np.sort(imp)

    def rate_at(sorted_scores, tau):
        return (sorted_scores.size - np.searchsorted(sorted_scores, tau, side="left")) / sorted_scores.size

    thresholds = np.concatenate([[np.inf], np.unique(np.concatenate([gen, imp]))[::-1]])
    roc = np.array([(rate_at(imp_sorted, t), rate_at(gen_sorted, t)) for t in thresholds])

    candidates = np.append(np.unique(imp), np.nextafter(imp_sorted[-1], np.inf))
    cand_far = rate_at(imp_sorted, candidates)
    vr = {}
    for target in far_targets:
        tau = candidates[np.argmax(cand_far <= target)]
        vr[float(target)] = float(rate_at(gen_sorted, tau))
    return roc, vr


# -- reports -----------------------------------------------------------------

@dataclass
class EvalReport:
    """Metrics for one fold, or fold means with per-fold values and sample std."""

    rank1: float
    vr_at_far: dict[float, float]
    roc: np.ndarray
    folds: list["EvalReport"] = field(default_factory=list)
    std: dict[str, float] = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        out = {"rank1": self.rank1}
        out.update({far_label(t): v for t, v in sorted(self.vr_at_far.items(), reverse=True)})
        return out


def far_label(target: float) -> str:
    return f"vr@far={target:g}"


def evaluate_scores(scores: ScoreMatrix, far_targets: Sequence[float] = FAR_TARGETS) -> EvalReport:
    roc, vr = roc_and_vr(scores, far_targets)
    return EvalReport(rank1(scores), vr, roc)


def _mean_roc(rocs: Sequence[np.ndarray]) -> np.ndarray:
    """Vertical average of step ROCs on the union of their FAR values."""
    grid = np.unique(np.concatenate([r[:, 0] for r in rocs]))
    vrs = []
    for r in rocs:
        # best VR achievable at FAR <= x
        idx = np.searchsorted(r[:, 0], grid, side="right") - 1
        vrs.append(np.maximum.accumulate(r[:, 1])[idx])
    return np.column_stack([grid, np.mean(vrs, axis=0)])


def aggregate_folds(reports: Sequence[EvalReport]) -> EvalReport:
    if not reports:
        raise ValueError("need at least one fold")
    reports = list(reports)
    per_metric = {k: np.array([r.metrics()[k] for r in reports]) for k in reports[0].metrics()}
    ddof = 1 if len(reports) > 1 else 0
    std = {k: float(np.std(v, ddof=ddof)) if len(v) > 1 else 0.0 for k, v in per_metric.items()}
    targets = sorted(reports[0].vr_at_far, reverse=True)
    return EvalReport(
        rank1=float(per_metric["rank1"].mean()),
        vr_at_far={t: float(np.mean([r.vr_at_far[t] for r in reports])) for t in targets},
        roc=_mean_roc([r.roc for r in reports]),
        folds=reports,
        std=std,
    )


def report_csv(report: EvalReport) -> str:
    """One row per fold, then ``mean`` and ``std`` rows."""
    folds = report.folds or [report]
    keys = list(report.metrics())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold"] + keys)
    for i, r in enumerate(folds):
        w.writerow([i] + [repr(r.metrics()[k]) for k in keys])
    w.writerow(["mean"] + [repr(report.metrics()[k]) for k in keys])
    w.writerow(["std"] + [repr(report.std.get(k, 0.0)) for k in keys])
    return buf.getvalue()


def read_report_csv(path: str | os.PathLike) -> dict[str, dict[str, float]]:
    """Rows of a report CSV keyed by their ``fold`` column."""
    with open(path, newline="") as fh:
        return {row.pop("fold"): {k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)}


def roc_csv(roc: np.ndarray) -> str:
    return "far,vr\n" + "".join(f"{far!r},{vr!r}\n" for far, vr in roc.tolist())


def roc_svg(roc: np.ndarray, title: str = "ROC", size: int = 360) -> str:
    """Log-FAR ROC line plot as a standalone SVG document."""
    margin = 48
    span = size - 2 * margin
    lo = -4.0
    far = np.clip(roc[:, 0], 10 ** lo, 1.0)
    xs = margin + (np.log10(far) - lo) / -lo * span
    ys = size - margin - roc[:, 1] * span
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    ticks = []
    for e in range(int(lo), 1):
        x = margin + (e - lo) / -lo * span
        ticks.append(f'<line x1="{x:.2f}" y1="{size - margin}" x2="{x:.2f}" y2="{size - margin + 4}" stroke="black"/>'
                     f'<text x="{x:.2f}" y="{size - margin + 16}" font-size="10" text-anchor="middle">1e{e}</text>')
    for v in (0.0, 0.5, 1.0):
        y = size - margin - v * span
        ticks.append(f'<text x="{margin - 6}" y="{y + 3:.2f}" font-size="10" text-anchor="end">{v:.1f}</text>')
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">\n'
        f'<rect width="{size}" height="{size}" fill="white"/>\n'
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="black"/>\n'
        + "\n".join(ticks) + "\n"
        f'<polyline points="{pts}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>\n'
        f'<text x="{size / 2}" y="{margin - 14}" font-size="12" text-anchor="middle">{title}</text>\n'
        f'<text x="{size / 2}" y="{size - 10}" font-size="11" text-anchor="middle">false accept rate</text>\n'
        f'<text x="14" y="{size / 2}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2})">verification rate</text>\n'
        "</svg>\n"
    )


# -- end-to-end fold evaluation ----------------------------------------------------

def center_gray(gray: np.ndarray, crop: int) -> np.ndarray:
    h, w = gray.shape[-2:]
    top, left = (h - crop) // 2, (w - crop) // 2
    return np.ascontiguousarray(gray[..., top:top + crop, left:left + crop])


def protocol_features(extractor, dataset, protocol, g_v=None):
    """Gallery and probe features for a fold; probes go through ``g_v`` when given."""
    from .features import embed, gray_stack, hallucinated_gray

    crop = extractor.input_size
    gallery = [dataset[i] for i in protocol.gallery]
    probes = [dataset[i] for i in protocol.probes]
    g_gray = center_gray(gray_stack(gallery), crop)
    p_gray = hallucinated_gray(g_v, probes) if g_v is not None else gray_stack(probes)
    p_gray = center_gray(p_gray, crop)
    return (embed(extractor, g_gray), np.array([s.identity_id for s in gallery]),
            embed(extractor, p_gray), np.array([s.identity_id for s in probes]))


def evaluate_fold(extractor, dataset, protocol, g_v=None, far_targets=FAR_TARGETS) -> EvalReport:
    gf, gid, pf, pid = protocol_features(extractor, dataset, protocol, g_v)
    return evaluate_scores(ScoreMatrix.from_features(gf, gid, pf, pid), far_targets)

"""Procedural VIS/NIR face-like images with identity labels, and fold protocols.

Faces are drawn in normalised coordinates so the same identity renders
consistently at 144x144 or at the 36x36 test profile. The NIR path keeps
the geometry but collapses the spectrum to one channel, darkens toward the
border, blurs, and uses its own noise model.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import Image, read_pnm, write_pnm

VIS, NIR = "VIS", "NIR"
MODALITIES = (VIS, NIR)
MANIFEST_COLUMNS = ("file_path", "identity_id", "modality", "eye_l_row", "eye_l_col",
                    "eye_r_row", "eye_r_col", "nuisance_seed")

# NIR spectral response weights applied to the rendered RGB radiance
NIR_RESPONSE = np.array([0.62, 0.28, 0.10])


@dataclass(frozen=True)
class IdentityParams:
    identity_id: int
    face_axes: tuple[float, float]
    eye_spacing: float
    eye_radius: float
    nose_length: float
    mouth_curvature: float
    albedo: tuple[float, float, float]
    iris: tuple[float, float, float]
    hair: tuple[float, float, float]
    hairline: float
    brow_thickness: float
    marks: tuple[tuple[float, float, float], ...]  # (du, dv, radius) relative to face centre

    def geometry(self) -> np.ndarray:
        return np.array([*self.face_axes, self.eye_spacing, self.eye_radius, self.nose_length,
                         self.mouth_curvature, self.hairline, self.brow_thickness])


@dataclass(frozen=True)
class FaceSample:
    image: Image
    identity_id: int
    modality: str
    eye_centers: tuple[tuple[int, int], tuple[int, int]]
    nuisance_seed: int


@dataclass(frozen=True)
class FoldProtocol:
    """Indices into a dataset list; gallery is one VIS image per test identity."""

    fold: int
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    gallery: tuple[int, ...]
    probes: tuple[int, ...]
    train_samples: tuple[int, ...] = field(default=())


def identity_params(identity_id: int, identity_seed: int = 0) -> IdentityParams:
    rng = np.random.default_rng([identity_seed, identity_id, 0x1D])
    skin = rng.uniform(0.45, 0.95)
    albedo = (skin, skin * rng.uniform(0.6, 0.85), skin * rng.uniform(0.45, 0.75))
    marks = tuple(
        (float(rng.uniform(-0.22, 0.22)), float(rng.uniform(-0.05, 0.3)), float(rng.uniform(0.02, 0.045)))
        for _ in range(int(rng.integers(1, 4)))
    )
    return IdentityParams(
        identity_id=identity_id,
        face_axes=(float(rng.uniform(0.27, 0.37)), float(rng.uniform(0.36, 0.45))),
        eye_spacing=float(rng.uniform(0.26, 0.36)),
        eye_radius=float(rng.uniform(0.03, 0.055)),
        nose_length=float(rng.uniform(0.1, 0.2)),
        mouth_curvature=float(rng.uniform(-1.5, 1.5)),
        albedo=tuple(float(a) for a in albedo),
        iris=tuple(float(a) for a in rng.uniform(0.05, 0.6, 3)),
        hair=tuple(float(a) for a in rng.uniform(0.02, 0.5) * rng.uniform(0.6, 1.0, 3)),
        hairline=float(rng.uniform(0.12, 0.26)),
        brow_thickness=float(rng.uniform(0.01, 0.03)),
        marks=marks,
    )


def _soft(signed_dist: np.ndarray) -> np.ndarray:
    """Coverage from a signed distance in pixels (negative inside)."""
    return np.clip(0.5 - signed_dist, 0.0, 1.0)


def _ellipse_dist(yy, xx, cy, cx, ry, rx):
    q = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    return (q - 1.0) * min(ry, rx)


def _paint(canvas: np.ndarray, mask: np.ndarray, color) -> None:
    canvas *= 1.0 - mask[..., None]
    canvas += mask[..., None] * np.asarray(color)


def _render_radiance(p: IdentityParams, size: int, rng: np.random.Generator):
    s = float(size)
    max_shift = 4.0 * s / 144.0
    dy, dx = (int(round(v)) for v in rng.uniform(-max_shift, max_shift, 2))
    gain = rng.uniform(0.8, 1.15)
    light_angle = rng.uniform(-0.5, 0.5)
    mouth_curv = p.mouth_curvature + rng.normal(0.0, 0.4)

    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cx, cy = 0.5 * s + dx, 0.54 * s + dy
    ax, ay = p.face_axes[0] * s, p.face_axes[1] * s

    img = np.empty((size, size, 3))
    img[:] = (0.22 + 0.12 * yy / s)[..., None]

    # hair cap behind the face
    hair_top = cy - ay * 1.08
    hair = _soft(_ellipse_dist(yy, xx, cy - 0.02 * s, cx, ay * 1.1, ax * 1.12))
    hair *= (yy < cy - ay + p.hairline * s + 0.06 * s)
    hair *= (yy > hair_top - 0.02 * s)
    _paint(img, hair, p.hair)

    # shaded skin
    face = _soft(_ellipse_dist(yy, xx, cy, cx, ay, ax))
    face *= (yy > cy - ay + p.hairline * s) | (yy > cy - 0.55 * ay)
    nx = np.clip((xx - cx) / ax, -1, 1)
    ny = np.clip((yy - cy) / ay, -1, 1)
    nz = np.sqrt(np.clip(1.0 - nx ** 2 - ny ** 2, 0.0, 1.0))
    light = np.array([np.sin(light_angle), -0.3, np.cos(light_angle)])
    light /= np.linalg.norm(light)
    shade = 0.35 + 0.65 * np.clip(nx * light[0] + ny * light[1] + nz * light[2], 0.0, 1.0)
    skin = shade[..., None] * np.asarray(p.albedo)
    img = img * (1.0 - face[..., None]) + skin * face[..., None]

    # identity marks
    for du, dv, rad in p.marks:
        m = _soft(_ellipse_dist(yy, xx, cy + dv * ay, cx + du * 2 * ax, rad * s, rad * s)) * face
        img *= 1.0 - 0.45 * m[..., None]

    ey = cy - 0.12 * s
    half = 0.5 * p.eye_spacing * s
    eyes = ((int(round(ey)), int(round(cx - half))), (int(round(ey)), int(round(cx + half))))
    r = p.eye_radius * s
    for er_c, ec_c in eyes:
        brow_y = er_c - 2.0 * r
        brow = _soft(np.maximum(np.abs(yy - brow_y) - p.brow_thickness * s * 0.5,
                                np.abs(xx - ec_c) - 1.8 * r))
        _paint(img, brow, np.asarray(p.hair) * 0.8)
        _paint(img, _soft(_ellipse_dist(yy, xx, er_c, ec_c, 0.75 * r, 1.6 * r)), (0.92, 0.9, 0.88))
        _paint(img, _soft(_ellipse_dist(yy, xx, er_c, ec_c, 0.65 * r, 0.65 * r)), p.iris)
        _paint(img, _soft(_ellipse_dist(yy, xx, er_c, ec_c, 0.28 * r, 0.28 * r)), (0.03, 0.03, 0.03))

    # nose ridge and mouth
    nose_top, nose_bot = ey + 0.8 * r, ey + p.nose_length * s
    nose = _soft(np.maximum(np.abs(xx - cx - 0.01 * s) - 0.012 * s,
                            np.maximum(nose_top - yy, yy - nose_bot)))
    img *= 1.0 - 0.3 * nose[..., None]
    my = cy + 0.22 * s
    mw = 0.12 * s
    u = (xx - cx) / mw
    curve = my - mouth_curv * 0.03 * s * (u ** 2 - 0.5)
    mouth = _soft(np.maximum(np.abs(yy - curve) - 0.012 * s, np.abs(xx - cx) - mw))
    _paint(img, mouth, np.asarray(p.albedo) * np.array([0.85, 0.45, 0.45]))

    return np.clip(img * gain, 0.0, 1.0), eyes


def render_face(params: IdentityParams, modality: str, nuisance_seed: int, size: int = 144) -> FaceSample:
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}")
    rng = np.random.default_rng([int(nuisance_seed), 0x5EED])
    radiance, eyes = _render_radiance(params, size, rng)
    if modality == VIS:
        img = radiance + rng.normal(0.0, 0.015, radiance.shape)
    else:
        gray = (radiance @ NIR_RESPONSE) ** 0.8
        yy, xx = np.mgrid[0:size, 0:size] + 0.5
        rr = ((yy - size / 2) ** 2 + (xx - size / 2) ** 2) / (size / 2) ** 2
        gray = gray * (1.0 - 0.25 * rr)
        gray = gaussian_filter(gray, sigma=max(0.5, 0.012 * size), mode="nearest")
        gray = gray * (1.0 + rng.normal(0.0, 0.05, gray.shape)) + rng.uniform(-0.03, 0.03, gray.shape)
        img = np.repeat(gray[..., None], 3, axis=2)
    return FaceSample(
        image=Image(img, "rgb"),
        identity_id=params.identity_id,
        modality=modality,
        eye_centers=eyes,
        nuisance_seed=int(nuisance_seed),
    )


def nuisance_seed_for(seed: int, identity_id: int, modality: str, index: int) -> int:
    ss = np.random.SeedSequence([seed, identity_id, MODALITIES.index(modality), index])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_dataset(n_identities: int, vis_per_id: int, nir_per_id: int, seed: int,
                 size: int = 144, identity_seed: int = 0) -> list[FaceSample]:
    """All identities x per-modality samples; no VIS/NIR pairing is exposed.

    Identity geometry depends only on ``identity_seed``; ``seed`` drives the
    nuisance draws.
    """
    if min(n_identities, vis_per_id, nir_per_id) < 1:
        raise ValueError("identity and per-modality counts must be >= 1")
    samples = []
    for ident in range(n_identities):
        params = identity_params(ident, identity_seed)
        for modality, count in ((VIS, vis_per_id), (NIR, nir_per_id)):
            for j in range(count):
                samples.append(render_face(params, modality, nuisance_seed_for(seed, ident, modality, j), size))
    return samples


def split_folds(dataset: Sequence[FaceSample], k: int, seed: int) -> list[FoldProtocol]:
    ids = sorted({s.identity_id for s in dataset})
    if k < 2:
        raise ValueError("need at least 2 folds")
    if len(ids) < 2 * k:
        raise ValueError(f"{len(ids)} identities cannot fill {k} folds (need >= {2 * k})")
    rng = np.random.default_rng([seed, 0xF01D])
    order = [ids[i] for i in rng.permutation(len(ids))]
    chunks = np.array_split(np.array(order), k)
    folds = []
    for f, chunk in enumerate(chunks):
        test = tuple(sorted(int(i) for i in chunk))
        test_set = set(test)
        train = tuple(i for i in ids if i not in test_set)
        gallery, probes = [], []
        for ident in test:
            vis = [n for n, s in enumerate(dataset) if s.identity_id == ident and s.modality == VIS]
            gallery.append(vis[int(rng.integers(len(vis)))])
            probes.extend(n for n, s in enumerate(dataset) if s.identity_id == ident and s.modality == NIR)
        train_samples = tuple(n for n, s in enumerate(dataset) if s.identity_id not in test_set)
        folds.append(FoldProtocol(f, train, test, tuple(gallery), tuple(probes), train_samples))
    return folds


# -- on-disk dataset -----------------------------------------------------------

def write_dataset(samples: Sequence[FaceSample], out_dir: str | os.PathLike) -> Path:
    """Write PPM (VIS) / PGM (NIR) files plus ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    for modality in MODALITIES:
        (out / modality.lower()).mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    counters: dict[tuple[int, str], int] = {}
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for s in samples:
            j = counters.get((s.identity_id, s.modality), 0)
            counters[(s.identity_id, s.modality)] = j + 1
            if s.modality == VIS:
                rel = f"vis/id{s.identity_id:04d}_{j:03d}.ppm"
                write_pnm(out / rel, s.image)
            else:
                rel = f"nir/id{s.identity_id:04d}_{j:03d}.pgm"
                write_pnm(out / rel, Image(s.image.values[:, :, 0], "gray"))
            (lr, lc), (rr, rc) = s.eye_centers
            writer.writerow([rel, s.identity_id, s.modality, lr, lc, rr, rc, s.nuisance_seed])
    return manifest


def read_dataset(path: str | os.PathLike) -> list[FaceSample]:
    """Load a dataset from a manifest CSV (or a directory containing one)."""
    path = Path(path)
    manifest = path / "manifest.csv" if path.is_dir() else path
    root = manifest.parent
    samples = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise ValueError(f"{manifest}: unexpected columns {reader.fieldnames}")
        for row in reader:
            img = read_pnm(root / row["file_path"])
            if img.colorspace == "gray":
                img = Image(np.repeat(img.values, 3, axis=2), "rgb")
            samples.append(FaceSample(
                image=img,
                identity_id=int(row["identity_id"]),
                modality=row["modality"],
                eye_centers=((int(row["eye_l_row"]), int(row["eye_l_col"])),
                             (int(row["eye_r_row"]), int(row["eye_r_col"]))),
                nuisance_seed=int(row["nuisance_seed"]),
            ))
    return samples

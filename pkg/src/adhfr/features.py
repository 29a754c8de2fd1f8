"""Adversarial discriminative feature learning on grayscale crops.

One extractor (shared weights) embeds VIS and NIR-origin images. A small
feature discriminator tries to tell VIS features from NIR ones; the
extractor is trained against it together with a class-wise variance
discrepancy term and a softmax classifier.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Adam, Conv2d, Linear, Module, Tensor, backward, frozen, no_grad
from .autodiff import functional as F
from .config import ExperimentConfig
from .hallucination import Generator, sample_ycbcr, translate_batch
from .imaging import Image, crop_offset, luminance
from .seeding import component_rng
from .synth import NIR, VIS, FaceSample

logger = logging.getLogger(__name__)

SLOPE = 0.2
TRUNK_BLOCKS = 4


class FeatureExtractor(Module):
    """Conv/pool trunk followed by a dense projection to ``feature_dim``."""

    def __init__(self, width: int, input_size: int, rng: np.random.Generator,
                 feature_dim: int = 256, dtype=np.float32):
        if input_size % 2 ** TRUNK_BLOCKS:
            raise ValueError(f"input size must be a multiple of {2 ** TRUNK_BLOCKS}")
        self.input_size = input_size
        chans = [1, width, 2 * width, 4 * width, 4 * width]
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng, dtype=dtype) for i in range(TRUNK_BLOCKS)]
        side = input_size // 2 ** TRUNK_BLOCKS
        self.fc = Linear(chans[-1] * side * side, feature_dim, rng, dtype=dtype, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        s = self.input_size
        if x.ndim != 4 or x.shape[1:] != (1, s, s):
            raise ValueError(f"extractor expects (N, 1, {s}, {s}) input, got {x.shape}")
        h = F.add_scalar(F.mul_scalar(x, 2.0), -1.0)
        for conv in self.convs:
            h = F.max_pool2x2(F.leaky_relu(conv(h), SLOPE))
        return self.fc(F.reshape(h, (h.shape[0], -1)))


class FeatureDiscriminator(Module):
    """Two hidden layers; outputs the probability that a feature is VIS."""

    def __init__(self, feature_dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(feature_dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, hidden, rng, dtype=dtype)
        self.out = Linear(hidden, 1, rng, dtype=dtype, gain=1.0)

    def forward(self, f: Tensor) -> Tensor:
        h = F.leaky_relu(self.fc1(f), SLOPE)
        h = F.leaky_relu(self.fc2(h), SLOPE)
        return F.sigmoid(self.out(h))


class ClassifierHead(Module):
    def __init__(self, feature_dim: int, num_classes: int, rng: np.random.Generator, dtype=np.float32):
        self.num_classes = num_classes
        self.linear = Linear(feature_dim, num_classes, rng, bias=False, dtype=dtype, gain=1.0)

    def forward(self, f: Tensor) -> Tensor:
        return self.linear(f)


def extract(extractor: FeatureExtractor, img: Image) -> np.ndarray:
    """Embed one image (converted to grayscale) as a feature vector."""
    gray = luminance(img)
    if gray.height != extractor.input_size or gray.width != extractor.input_size:
        raise ValueError(f"expected a {extractor.input_size}x{extractor.input_size} image, got {gray.height}x{gray.width}")
    x = Tensor(gray.values.transpose(2, 0, 1)[None].astype(extractor.fc.weight.dtype))
    with no_grad():
        return extractor(x).data[0]


def embed(extractor: FeatureExtractor, gray: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Features for an (N, 1, S, S) array."""
    outs = []
    with no_grad():
        for i in range(0, len(gray), chunk):
            outs.append(extractor(Tensor(gray[i:i + chunk])).data)
    return np.concatenate(outs, axis=0)


# -- losses --------------------------------------------------------------------

def loss_f_adv(d_scores_on_nir: Tensor) -> Tensor:
    """-mean log D_f(F(NIR-origin)); pushes NIR features toward the VIS side."""
    if np.any(d_scores_on_nir.data <= 0) or np.any(d_scores_on_nir.data > 1):
        raise ValueError("loss_f_adv: scores must lie in (0, 1]")
    return F.mul_scalar(F.mean(F.log(d_scores_on_nir)), -1.0)


def feature_discriminator_loss(vis_scores: Tensor, nir_scores: Tensor) -> Tensor:
    """Binary cross-entropy averaged over the pooled batch (VIS = 1, NIR = 0)."""
    if vis_scores.size == 0 or nir_scores.size == 0:
        raise ValueError("feature discriminator needs non-empty VIS and NIR batches")
    terms = F.concat([F.reshape(F.log(vis_scores), (-1,)),
                      F.reshape(F.log(F.add_scalar(F.mul_scalar(nir_scores, -1.0), 1.0)), (-1,))], axis=0)
    return F.mul_scalar(F.mean(terms), -1.0)


def train_feature_discriminator(d_f: FeatureDiscriminator, opt: Adam, vis_features, nir_features) -> float:
    """One update of ``d_f`` on detached features; returns the loss value."""
    v = Tensor(vis_features.data if isinstance(vis_features, Tensor) else np.asarray(vis_features))
    n = Tensor(nir_features.data if isinstance(nir_features, Tensor) else np.asarray(nir_features))
    if v.shape[0] == 0 or n.shape[0] == 0:
        raise ValueError("feature discriminator needs non-empty VIS and NIR batches")
    opt.zero_grad()
    loss = feature_discriminator_loss(d_f(v), d_f(n))
    backward(loss)
    opt.step()
    return loss.item()


def variance(features: Tensor) -> Tensor:
    """Per-dimension population variance of an (n, d) batch."""
    n = features.shape[0]
    if features.ndim != 2 or n < 2:
        raise ValueError(f"variance needs at least 2 vectors in an (n, d) batch, got {features.shape}")
    ones = Tensor(np.ones((n, 1), dtype=features.dtype))
    mu = F.mean(features, axes=0, keepdims=True)
    centred = F.sub(features, F.matmul(ones, mu))
    return F.mean(F.square(centred), axes=0)


def loss_cvd(vis_by_class: Mapping[int, Tensor], nir_by_class: Mapping[int, Tensor]) -> Tensor:
    """Sum over classes of ||var(VIS_c) - var(NIR_c)||_2.

    Classes lacking two samples in either modality are skipped.
    """
    total = None
    for c in sorted(vis_by_class):
        v, n = vis_by_class[c], nir_by_class.get(c)
        if n is None or v.shape[0] < 2 or n.shape[0] < 2:
            continue
        term = F.l2_norm(F.sub(variance(v), variance(n)))
        total = term if total is None else F.add(total, term)
    if total is None:
        raise ValueError("loss_cvd: no class has >= 2 samples in both modalities")
    return total


def loss_cls(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the pooled VIS + NIR batch."""
    return F.softmax_cross_entropy(logits, labels)


def loss_final(f_adv, cvd, cls, lambda1: float, lambda2: float):
    """f_adv + lambda1 * cvd + lambda2 * cls; ``None`` terms are inactive."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be non-negative")
    if not isinstance(cls, Tensor):
        return (f_adv or 0.0) + lambda1 * (cvd or 0.0) + lambda2 * cls
    total = F.mul_scalar(cls, lambda2)
    if cvd is not None:
        total = F.add(F.mul_scalar(cvd, lambda1), total)
    if f_adv is not None:
        total = F.add(f_adv, total)
    return total


# -- presets and training -----------------------------------------------------------

@dataclass(frozen=True)
class PresetTerms:
    finetune: bool
    adversarial: bool
    variance: bool
    hallucinate: bool


PRESET_TERMS = {
    "basic": PresetTerms(False, False, False, False),
    "softmax": PresetTerms(True, False, False, False),
    "adfl-no-adv": PresetTerms(True, False, True, False),
    "adfl-no-cvd": PresetTerms(True, True, False, False),
    "adfl": PresetTerms(True, True, True, False),
    "hallucination": PresetTerms(True, False, False, True),
    "hallucination+adfl": PresetTerms(True, True, True, True),
}

HISTORY_FIELDS = ("phase", "iteration", "d_f", "f_adv", "cvd", "cls", "total")


@dataclass
class FeatureModels:
    extractor: FeatureExtractor
    head: ClassifierHead
    d_f: FeatureDiscriminator
    class_ids: tuple[int, ...]
    history: list[dict] = field(default_factory=list)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in (("extractor", self.extractor), ("head", self.head), ("d_f", self.d_f)):
            out.update({f"{prefix}.{k}": v for k, v in m.state_dict().items()})
        return out

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        for prefix, m in (("extractor", self.extractor), ("head", self.head), ("d_f", self.d_f)):
            m.load_state_dict({k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")})


def build_feature_models(config: ExperimentConfig, class_ids: Sequence[int]) -> FeatureModels:
    rng = component_rng(config.seed, "features/init")
    return FeatureModels(
        extractor=FeatureExtractor(config.feat_width, config.crop_size, rng, config.feature_dim),
        head=ClassifierHead(config.feature_dim, len(class_ids), rng),
        d_f=FeatureDiscriminator(config.feature_dim, config.fd_hidden, rng),
        class_ids=tuple(class_ids),
    )


def gray_stack(samples: Sequence[FaceSample]) -> np.ndarray:
    """(N, 1, H, W) BT.601 luminance of each sample."""
    return np.stack([luminance(s.image).values.transpose(2, 0, 1) for s in samples]).astype(np.float32)


def hallucinated_gray(g_v: Generator, samples: Sequence[FaceSample]) -> np.ndarray:
    """Luminance of ``G_V`` translations of full-size NIR images."""
    ycc = np.stack([sample_ycbcr(s) for s in samples])
    eyes = np.array([s.eye_centers for s in samples], dtype=np.int64)
    return translate_batch(g_v, ycc, eyes)[:, 0:1].astype(np.float32)


class ClassBalancedSampler:
    """Draw ``classes`` identities, then ``per_class`` random crops per modality each."""

    def __init__(self, samples: Sequence[FaceSample], gray: np.ndarray, class_ids: Sequence[int],
                 classes: int, per_class: int, crop: int, rng: np.random.Generator):
        self.gray = gray
        self.crop = crop
        self.rng = rng
        self.class_ids = list(class_ids)
        self.classes = min(classes, len(self.class_ids))
        self.per_class = per_class
        self.index = {(c, m): [i for i, s in enumerate(samples) if s.identity_id == c and s.modality == m]
                      for c in self.class_ids for m in (VIS, NIR)}
        for (c, m), idx in self.index.items():
            if len(idx) < per_class:
                raise ValueError(f"identity {c} has {len(idx)} {m} images; the sampler needs {per_class}")

    def _crops(self, idx: Sequence[int]) -> np.ndarray:
        _, _, h, w = self.gray.shape
        out = []
        for i in idx:
            top, left = crop_offset(h, w, self.crop, "random", self.rng)
            out.append(self.gray[i, :, top:top + self.crop, left:left + self.crop])
        return np.stack(out)

    def draw(self, modalities=(VIS, NIR)):
        chosen = self.rng.choice(len(self.class_ids), size=self.classes, replace=False)
        batches, labels = {}, []
        for m in modalities:
            idx = []
            for ci in chosen:
                pool = self.index[(self.class_ids[ci], m)]
                idx.extend(pool[j] for j in self.rng.choice(len(pool), size=self.per_class, replace=False))
            batches[m] = self._crops(idx)
        labels = np.repeat(chosen, self.per_class)
        return batches, labels


def pretrain(models: FeatureModels, dataset: Sequence[FaceSample], config: ExperimentConfig) -> None:
    """Softmax-only training on VIS images; stands in for large-scale VIS pretraining."""
    train = [s for s in dataset if s.identity_id in set(models.class_ids)]
    sampler = ClassBalancedSampler(train, gray_stack(train), models.class_ids, config.classes_per_batch,
                                   2 * config.samples_per_class, config.crop_size,
                                   component_rng(config.seed, "features/pretrain-batches"))
    opt = Adam(models.extractor.parameters() + models.head.parameters(), config.feat_lr, config.beta1, config.beta2)
    for it in range(1, config.pretrain_iterations + 1):
        batches, labels = sampler.draw((VIS,))
        opt.zero_grad()
        cls = loss_cls(models.head(models.extractor(Tensor(batches[VIS]))), labels)
        backward(cls)
        opt.step()
        models.history.append(dict(phase="pretrain", iteration=it, d_f=0.0, f_adv=0.0, cvd=0.0,
                                   cls=cls.item(), total=cls.item()))


def extractor_step(models: FeatureModels, opt: Adam, fv: Tensor, fn: Tensor, labels, k: int,
                   terms: PresetTerms, lambda1: float, lambda2: float):
    """One extractor + head update on features of a class-blocked batch.

    Rows ``[g*k, (g+1)*k)`` of ``fv`` and ``fn`` belong to class ``labels[g*k]``.
    D_f is frozen, so only extractor and head parameters move.
    """
    opt.zero_grad()
    f_adv = cvd = None
    with frozen(models.d_f):
        if terms.adversarial:
            f_adv = loss_f_adv(models.d_f(fn))
        if terms.variance:
            groups = range(len(labels) // k)
            cvd = loss_cvd({g: fv[g * k:(g + 1) * k] for g in groups}, {g: fn[g * k:(g + 1) * k] for g in groups})
        cls = loss_cls(models.head(F.concat([fv, fn], axis=0)), np.concatenate([labels, labels]))
        total = loss_final(f_adv, cvd, cls, lambda1, lambda2)
        backward(total)
    opt.step()
    return f_adv, cvd, cls, total


def finetune(models: FeatureModels, dataset: Sequence[FaceSample], config: ExperimentConfig,
             g_v: Generator | None = None) -> None:
    """Alternating D_f / extractor+head updates with the preset's active terms."""
    terms = PRESET_TERMS[config.preset]
    if terms.hallucinate != (g_v is not None):
        raise ValueError(f"preset {config.preset!r} {'needs' if terms.hallucinate else 'does not take'} "
                         "a hallucination generator")
    if not terms.finetune:
        return
    train = [s for s in dataset if s.identity_id in set(models.class_ids)]
    gray = gray_stack(train)
    if g_v is not None:
        nir_idx = [i for i, s in enumerate(train) if s.modality == NIR]
        gray[nir_idx] = hallucinated_gray(g_v, [train[i] for i in nir_idx])
    sampler = ClassBalancedSampler(train, gray, models.class_ids, config.classes_per_batch,
                                   config.samples_per_class, config.crop_size,
                                   component_rng(config.seed, "features/finetune-batches"))
    ext, d_f = models.extractor, models.d_f
    opt = Adam(ext.parameters() + models.head.parameters(), config.feat_lr, config.beta1, config.beta2)
    opt_d = Adam(d_f.parameters(), config.feat_lr, config.beta1, config.beta2)
    k = config.samples_per_class
    lambda1 = config.lambda1 if terms.variance else 0.0

    for it in range(1, config.feat_iterations + 1):
        batches, labels = sampler.draw()
        fv = ext(Tensor(batches[VIS]))
        fn = ext(Tensor(batches[NIR]))
        d_loss = train_feature_discriminator(d_f, opt_d, fv, fn) if terms.adversarial else 0.0
        f_adv, cvd, cls, total = extractor_step(models, opt, fv, fn, labels, k, terms, lambda1, config.lambda2)
        models.history.append(dict(phase="finetune", iteration=it, d_f=d_loss,
                                   f_adv=f_adv.item() if f_adv is not None else 0.0,
                                   cvd=cvd.item() if cvd is not None else 0.0,
                                   cls=cls.item(), total=total.item()))
        if it == 1 or it % 100 == 0:
            logger.info("features[%s] it=%d cls=%.4f total=%.4f", config.preset, it, cls.item(), total.item())


def train_features(dataset: Sequence[FaceSample], config: ExperimentConfig, class_ids: Sequence[int],
                   g_v: Generator | None = None, pretrained: Mapping[str, np.ndarray] | None = None) -> FeatureModels:
    """Pretrain (unless a pretrained state is given) then finetune per the config preset."""
    terms = PRESET_TERMS[config.preset]
    if terms.hallucinate != (g_v is not None):
        raise ValueError(f"preset {config.preset!r} and the supplied hallucination generator do not match")
    models = build_feature_models(config, class_ids)
    if pretrained is None:
        pretrain(models, dataset, config)
    else:
        models.load_state_dict(pretrained)
    finetune(models, dataset, config, g_v)
    return models

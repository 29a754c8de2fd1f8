"""Cross-spectral hallucination: two-path generators, image discriminators, losses.

Generators consume and emit YCbCr NCHW tensors in [0, 1]. ``G_V`` maps
NIR to VIS and ``G_N`` maps VIS to NIR; ``D_V`` and ``D_N`` judge realness
in their own modality.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Adam, Conv2d, InstanceNorm2d, Linear, Module, ResidualBlock, Tensor, backward, frozen, no_grad
from .autodiff import functional as F
from .config import ExperimentConfig
from .imaging import Image, crop_offset, rgb_to_ycbcr_array
from .seeding import component_rng
from .synth import NIR, VIS, FaceSample

logger = logging.getLogger(__name__)

SLOPE = 0.2
GLOBAL_BLOCKS = 6
LOCAL_BLOCKS = 3


class Generator(Module):
    """Global residual path plus a periocular local path fused before the last block.

    The local path sees both eye patches (right one mirrored), downsamples
    them like the global path, and its feature maps are added onto the
    global map at the eye boxes (right one mirrored back).
    """

    def __init__(self, width: int, patch_size: int, rng: np.random.Generator, dtype=np.float32,
                 downsample: int = 2):
        if downsample < 1:
            raise ValueError("generator needs at least one downsampling stage")
        w = width
        self.patch_size = patch_size
        self.downsample = downsample
        widths = [w * 2 ** i for i in range(downsample + 1)]
        self.g_in = Conv2d(3, w, 3, rng, dtype=dtype)
        self.g_in_norm = InstanceNorm2d(w, dtype)
        self.g_down = [Conv2d(widths[i], widths[i + 1], 3, rng, stride=2, dtype=dtype) for i in range(downsample)]
        self.g_down_norm = [InstanceNorm2d(c, dtype) for c in widths[1:]]
        self.g_blocks = [ResidualBlock(widths[-1], rng, dtype) for _ in range(GLOBAL_BLOCKS)]
        self.g_up = [Conv2d(widths[i + 1], widths[i], 3, rng, dtype=dtype) for i in reversed(range(downsample))]
        self.g_up_norm = [InstanceNorm2d(widths[i], dtype) for i in reversed(range(downsample))]
        self.g_out = Conv2d(w, 3, 3, rng, dtype=dtype, gain=0.5)

        self.l_in = Conv2d(3, w, 3, rng, dtype=dtype)
        self.l_in_norm = InstanceNorm2d(w, dtype)
        self.l_down = [Conv2d(widths[i], widths[i + 1], 3, rng, stride=2, dtype=dtype) for i in range(downsample)]
        self.l_down_norm = [InstanceNorm2d(c, dtype) for c in widths[1:]]
        self.l_blocks = [ResidualBlock(widths[-1], rng, dtype) for _ in range(LOCAL_BLOCKS)]

    @staticmethod
    def _cna(x, conv, norm):
        return F.leaky_relu(norm(conv(x)), SLOPE)

    def _check_eyes(self, shape, eyes: np.ndarray) -> None:
        n, _, h, w = shape
        half = self.patch_size // 2
        scale = 2 ** self.downsample
        if h % scale or w % scale or self.patch_size % scale:
            raise ValueError(f"generator input size and eye patch must be multiples of {scale}, got {h}x{w}")
        if eyes.shape != (n, 2, 2):
            raise ValueError(f"expected eye centres of shape ({n}, 2, 2), got {eyes.shape}")
        if (eyes < half).any() or (eyes[..., 0] + half > h).any() or (eyes[..., 1] + half > w).any():
            raise ValueError(f"eye centre closer than {half}px to the border of a {h}x{w} input")

    def local_features(self, x: Tensor, eyes: np.ndarray) -> Tensor:
        n, _, h, w = x.shape
        half = self.patch_size // 2
        patches = []
        for i in range(n):
            for e, (r, c) in enumerate(eyes[i]):
                p = x[i:i + 1, :, r - half:r + half, c - half:c + half]
                patches.append(F.flip_width(p) if e == 1 else p)
        z = F.concat(patches, axis=0)
        z = self._cna(z, self.l_in, self.l_in_norm)
        for conv, norm in zip(self.l_down, self.l_down_norm):
            z = self._cna(z, conv, norm)
        for block in self.l_blocks:
            z = block(z)

        scale = 2 ** self.downsample
        fh, fw = h // scale, w // scale
        ps = z.shape[-1]
        pasted = []
        for i in range(n):
            acc = None
            for e, (r, c) in enumerate(eyes[i]):
                f = z[2 * i + e:2 * i + e + 1]
                if e == 1:
                    f = F.flip_width(f)
                top, left = (r - half) // scale, (c - half) // scale
                placed = F.pad2d(f, top, fh - top - ps, left, fw - left - ps)
                acc = placed if acc is None else F.add(acc, placed)
            pasted.append(acc)
        return F.concat(pasted, axis=0)

    def forward(self, x: Tensor, eyes) -> Tensor:
        eyes = np.asarray(eyes, dtype=np.int64)
        self._check_eyes(x.shape, eyes)
        h = self._cna(x, self.g_in, self.g_in_norm)
        for conv, norm in zip(self.g_down, self.g_down_norm):
            h = self._cna(h, conv, norm)
        for block in self.g_blocks[:-1]:
            h = block(h)
        h = F.add(h, self.local_features(x, eyes))
        h = self.g_blocks[-1](h)
        for conv, norm in zip(self.g_up, self.g_up_norm):
            h = self._cna(F.upsample2x(h), conv, norm)
        return F.add_scalar(F.mul_scalar(F.tanh(self.g_out(h)), 0.5), 0.5)


class Discriminator(Module):
    """Four stride-2 conv + leaky-relu layers, a dense layer and a sigmoid."""

    def __init__(self, width: int, image_size: int, rng: np.random.Generator, dtype=np.float32):
        if image_size % 16:
            raise ValueError("discriminator input size must be a multiple of 16")
        chans = [3, width, 2 * width, 4 * width, 8 * width]
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng, stride=2, dtype=dtype) for i in range(4)]
        side = image_size // 16
        self.fc = Linear(chans[-1] * side * side, 1, rng, dtype=dtype, gain=1.0)

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), SLOPE)
        h = F.reshape(h, (h.shape[0], -1))
        return F.sigmoid(self.fc(h))


# -- losses --------------------------------------------------------------------

def _check_scores(scores: Tensor, name: str) -> None:
    if np.any(scores.data <= 0) or np.any(scores.data > 1):
        raise ValueError(f"{name}: discriminator scores must lie in (0, 1]")


def loss_g_adv(d_scores: Tensor) -> Tensor:
    """-mean log D(G(I)) over generated samples."""
    _check_scores(d_scores, "loss_g_adv")
    return F.mul_scalar(F.mean(F.log(d_scores)), -1.0)


def loss_d_adv(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """-[mean log D(real) + mean log(1 - D(fake))].

    Callers score generated images that were detached from the generator.
    """
    _check_scores(real_scores, "loss_d_adv")
    if np.any(fake_scores.data <= 0) or np.any(fake_scores.data >= 1):
        raise ValueError("loss_d_adv: fake scores must lie in (0, 1)")
    real_term = F.mean(F.log(real_scores))
    fake_term = F.mean(F.log(F.add_scalar(F.mul_scalar(fake_scores, -1.0), 1.0)))
    return F.mul_scalar(F.add(real_term, fake_term), -1.0)


def _as_tensor(img) -> Tensor:
    if isinstance(img, Tensor):
        return img
    if isinstance(img, Image):
        return Tensor(img.values.transpose(2, 0, 1)[None])
    return Tensor(np.asarray(img))


def _luma(x: Tensor) -> Tensor:
    # YCbCr tensors carry luminance in channel 0; 1-channel tensors are already luminance
    return x if x.shape[1] == 1 else x[:, 0:1]


def loss_cyc(inp, reconstructed) -> Tensor:
    a, b = _as_tensor(inp), _as_tensor(reconstructed)
    if a.shape != b.shape:
        raise ValueError(f"loss_cyc: shape mismatch {a.shape} vs {b.shape}")
    return F.l1_mean(a, b)


def loss_intensity(inp, generated) -> Tensor:
    """L1 between luminance channels of the input and its translation."""
    a, b = _as_tensor(inp), _as_tensor(generated)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"loss_intensity: shape mismatch {a.shape} vs {b.shape}")
    return F.l1_mean(_luma(a), _luma(b))


def loss_generator_total(adv, cyc, intensity, alpha1: float, alpha2: float):
    if alpha1 < 0 or alpha2 < 0:
        raise ValueError("loss weights must be non-negative")
    if isinstance(adv, Tensor):
        return F.add(adv, F.add(F.mul_scalar(cyc, alpha1), F.mul_scalar(intensity, alpha2)))
    return adv + alpha1 * cyc + alpha2 * intensity


# -- inference -------------------------------------------------------------------

def generate(g: Generator, img: Image, eye_centers) -> Image:
    """Translate one YCbCr image; returns a YCbCr image of the same size."""
    if img.colorspace != "ycbcr":
        raise ValueError(f"generator expects a ycbcr image, got {img.colorspace}")
    x = Tensor(img.values.transpose(2, 0, 1)[None].astype(g.g_in.weight.dtype))
    with no_grad():
        out = g(x, np.asarray(eye_centers)[None])
    return Image(out.data[0].transpose(1, 2, 0), "ycbcr")


def translate_batch(g: Generator, ycc: np.ndarray, eyes: np.ndarray, chunk: int = 16) -> np.ndarray:
    """Run ``g`` over an (N, 3, H, W) array without recording gradients."""
    outs = []
    with no_grad():
        for i in range(0, len(ycc), chunk):
            outs.append(g(Tensor(ycc[i:i + chunk]), eyes[i:i + chunk]).data)
    return np.concatenate(outs, axis=0)


def sample_ycbcr(sample: FaceSample, dtype=np.float32) -> np.ndarray:
    return rgb_to_ycbcr_array(sample.image.values).transpose(2, 0, 1).astype(dtype)


# -- training ----------------------------------------------------------------------

@dataclass
class HallucinationModels:
    g_v: Generator
    g_n: Generator
    d_v: Discriminator
    d_n: Discriminator
    history: list[dict] = field(default_factory=list)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, m in (("g_v", self.g_v), ("g_n", self.g_n), ("d_v", self.d_v), ("d_n", self.d_n)):
            out.update({f"{prefix}.{k}": v for k, v in m.state_dict().items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for prefix, m in (("g_v", self.g_v), ("g_n", self.g_n), ("d_v", self.d_v), ("d_n", self.d_n)):
            m.load_state_dict({k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")})


HISTORY_FIELDS = ("iteration", "d_loss", "g_adv", "cyc", "intensity", "g_total")


def build_hallucination_models(config: ExperimentConfig, seed: int | None = None) -> HallucinationModels:
    rng = component_rng(config.seed if seed is None else seed, "hallucination/init")
    return HallucinationModels(
        g_v=Generator(config.gen_width, config.eye_patch, rng, downsample=config.gen_downsample),
        g_n=Generator(config.gen_width, config.eye_patch, rng, downsample=config.gen_downsample),
        d_v=Discriminator(config.disc_width, config.crop_size, rng),
        d_n=Discriminator(config.disc_width, config.crop_size, rng),
    )


class _CropSampler:
    def __init__(self, samples: Sequence[FaceSample], crop: int, rng: np.random.Generator):
        self.arrays = np.stack([sample_ycbcr(s) for s in samples])
        self.eyes = np.array([s.eye_centers for s in samples], dtype=np.int64)
        self.crop = crop
        self.rng = rng

    def draw(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.rng.integers(0, len(self.arrays), size=n)
        _, _, h, w = self.arrays.shape
        xs, eyes = [], []
        for i in idx:
            top, left = crop_offset(h, w, self.crop, "random", self.rng)
            xs.append(self.arrays[i, :, top:top + self.crop, left:left + self.crop])
            eyes.append(self.eyes[i] - np.array([top, left]))
        return np.stack(xs), np.stack(eyes)


def discriminator_step(models: HallucinationModels, opt_d: Adam, real_v: Tensor, eyes_v, real_n: Tensor,
                       eyes_n) -> float:
    """Update D_V and D_N against detached translations; returns the loss."""
    with no_grad():
        fake_v = models.g_v(real_n, eyes_n).detach()
        fake_n = models.g_n(real_v, eyes_v).detach()
    opt_d.zero_grad()
    d_loss = F.add(loss_d_adv(models.d_v(real_v), models.d_v(fake_v)),
                   loss_d_adv(models.d_n(real_n), models.d_n(fake_n)))
    backward(d_loss)
    opt_d.step()
    return d_loss.item()


def generator_step(models: HallucinationModels, opt_g: Adam, real_v: Tensor, eyes_v, real_n: Tensor, eyes_n,
                   alpha1: float, alpha2: float):
    """Update G_V and G_N through frozen discriminators, both cycle directions."""
    g_v, g_n, d_v, d_n = models.g_v, models.g_n, models.d_v, models.d_n
    opt_g.zero_grad()
    with frozen(d_v, d_n):
        fake_v = g_v(real_n, eyes_n)
        fake_n = g_n(real_v, eyes_v)
        rec_n = g_n(fake_v, eyes_n)
        rec_v = g_v(fake_n, eyes_v)
        adv = F.add(loss_g_adv(d_v(fake_v)), loss_g_adv(d_n(fake_n)))
        cyc = F.add(loss_cyc(real_n, rec_n), loss_cyc(real_v, rec_v))
        inten = F.add(loss_intensity(real_n, fake_v), loss_intensity(real_v, fake_n))
        total = loss_generator_total(adv, cyc, inten, alpha1, alpha2)
        backward(total)
    opt_g.step()
    return adv, cyc, inten, total


def train_hallucination(dataset: Sequence[FaceSample], config: ExperimentConfig,
                        identity_ids: Sequence[int] | None = None,
                        models: HallucinationModels | None = None) -> HallucinationModels:
    """Alternate one discriminator step (D_V, D_N) with one generator step (G_V, G_N).

    Labels are never used; ``identity_ids`` only restricts which images
    are visible (e.g. a fold's training identities).
    """
    keep = set(identity_ids) if identity_ids is not None else None
    pool = [s for s in dataset if keep is None or s.identity_id in keep]
    vis = [s for s in pool if s.modality == VIS]
    nir = [s for s in pool if s.modality == NIR]
    if not vis or not nir:
        raise ValueError("hallucination training needs both VIS and NIR images")
    models = models or build_hallucination_models(config)
    rng = component_rng(config.seed, "hallucination/batches")
    vis_sampler = _CropSampler(vis, config.crop_size, rng)
    nir_sampler = _CropSampler(nir, config.crop_size, rng)

    g_params = models.g_v.parameters() + models.g_n.parameters()
    d_params = models.d_v.parameters() + models.d_n.parameters()
    opt_g = Adam(g_params, config.hal_lr, config.beta1, config.beta2)
    opt_d = Adam(d_params, config.hal_lr, config.beta1, config.beta2)

    for it in range(1, config.hal_iterations + 1):
        xv, eyes_v = vis_sampler.draw(config.batch_size)
        xn, eyes_n = nir_sampler.draw(config.batch_size)
        real_v, real_n = Tensor(xv), Tensor(xn)
        d_loss = discriminator_step(models, opt_d, real_v, eyes_v, real_n, eyes_n)
        adv, cyc, inten, total = generator_step(models, opt_g, real_v, eyes_v, real_n, eyes_n,
                                                config.alpha1, config.alpha2)

        row = dict(iteration=it, d_loss=d_loss, g_adv=adv.item(), cyc=cyc.item(),
                   intensity=inten.item(), g_total=total.item())
        models.history.append(row)
        if it == 1 or it % 50 == 0:
            logger.info("hallucination it=%d d=%.4f adv=%.4f cyc=%.4f int=%.4f", it, row["d_loss"],
                        row["g_adv"], row["cyc"], row["intensity"])
    return models

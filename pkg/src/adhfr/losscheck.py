"""Finite-difference checks for every training loss, on tiny float64 models."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, max_relative_error
from .autodiff import functional as F
from .features import (ClassifierHead, FeatureDiscriminator, FeatureExtractor, feature_discriminator_loss,
                       loss_cls, loss_cvd, loss_f_adv, loss_final, variance)
from .hallucination import (Discriminator, Generator, loss_cyc, loss_d_adv, loss_g_adv, loss_generator_total,
                            loss_intensity)

F64 = np.float64
TINY = 16  # smallest size the image discriminator accepts


def _scores(rng, n=4):
    return Tensor(rng.uniform(0.05, 0.95, size=(n, 1)))


def _image_pair(rng, channels=3, size=6):
    """(a, b) with |a - b| bounded away from the L1 kink."""
    a = rng.uniform(0.2, 0.8, size=(2, channels, size, size))
    step = rng.uniform(0.02, 0.1, size=a.shape) * rng.choice([-1.0, 1.0], size=a.shape)
    return Tensor(a), Tensor(a + step)


def _check_g_adv(rng):
    s = _scores(rng)
    return max_relative_error(lambda: loss_g_adv(s), [s])


def _check_d_adv(rng):
    real, fake = _scores(rng), _scores(rng)
    return max_relative_error(lambda: loss_d_adv(real, fake), [real, fake])


def _check_cyc(rng):
    a, b = _image_pair(rng)
    return max_relative_error(lambda: loss_cyc(a, b), [a, b])


def _check_intensity(rng):
    a, b = _image_pair(rng)
    return max_relative_error(lambda: loss_intensity(a, b), [a, b])


def _check_generator_total(rng):
    """Full generator objective through a width-1 generator and discriminator."""
    g = Generator(1, 4, rng, dtype=F64)
    d = Discriminator(1, TINY, rng, dtype=F64)
    x = Tensor(rng.uniform(0.1, 0.9, size=(1, 3, TINY, TINY)))
    eyes = np.array([[[6, 4], [6, 12]]])
    a1, a2 = rng.uniform(0.5, 10, size=2)

    def total():
        fake = g(x, eyes)
        rec = g(fake, eyes)
        return loss_generator_total(loss_g_adv(d(fake)), loss_cyc(x, rec), loss_intensity(x, fake), a1, a2)

    return max_relative_error(total, [g.g_out.weight, g.l_in.bias, d.fc.weight])


def _check_variance(rng):
    x = Tensor(rng.normal(size=(5, 6)))
    proj = Tensor(rng.normal(size=6))
    return max_relative_error(lambda: F.sum(F.mul(variance(x), proj)), [x])


def _check_cvd(rng):
    vis = {c: Tensor(rng.normal(size=(3, 5))) for c in range(3)}
    nir = {c: Tensor(rng.normal(size=(3, 5))) for c in range(3)}
    return max_relative_error(lambda: loss_cvd(vis, nir), list(vis.values()) + list(nir.values()))


def _check_cls(rng):
    logits = Tensor(rng.normal(size=(6, 4)))
    labels = rng.integers(0, 4, size=6)
    return max_relative_error(lambda: loss_cls(logits, labels), [logits])


def _check_f_adv(rng):
    d_f = FeatureDiscriminator(6, 5, rng, dtype=F64)
    f = Tensor(rng.normal(size=(4, 6)))
    return max_relative_error(lambda: loss_f_adv(d_f(f)), [f, d_f.fc1.weight])


def _check_d_f(rng):
    d_f = FeatureDiscriminator(6, 5, rng, dtype=F64)
    fv, fn = Tensor(rng.normal(size=(4, 6))), Tensor(rng.normal(size=(4, 6)))
    return max_relative_error(lambda: feature_discriminator_loss(d_f(fv), d_f(fn)), [fv, fn, d_f.out.weight])


def _check_final(rng):
    """Weighted total through extractor, classifier head and feature discriminator."""
    ext = FeatureExtractor(2, TINY, rng, feature_dim=8, dtype=F64)
    head = ClassifierHead(8, 3, rng, dtype=F64)
    d_f = FeatureDiscriminator(8, 4, rng, dtype=F64)
    k = 2
    xv = Tensor(rng.uniform(size=(3 * k, 1, TINY, TINY)))
    xn = Tensor(rng.uniform(size=(3 * k, 1, TINY, TINY)))
    labels = np.repeat(np.arange(3), k)
    l1, l2 = rng.uniform(0.05, 2.0, size=2)

    def total():
        fv, fn = ext(xv), ext(xn)
        groups = range(3)
        cvd = loss_cvd({g: fv[g * k:(g + 1) * k] for g in groups}, {g: fn[g * k:(g + 1) * k] for g in groups})
        cls = loss_cls(head(F.concat([fv, fn], axis=0)), np.concatenate([labels, labels]))
        return loss_final(loss_f_adv(d_f(fn)), cvd, cls, l1, l2)

    return max_relative_error(total, [ext.convs[0].weight, ext.fc.bias, head.linear.weight])


LOSS_CHECKS = {
    "loss_g_adv": _check_g_adv,
    "loss_d_adv": _check_d_adv,
    "loss_cyc": _check_cyc,
    "loss_intensity": _check_intensity,
    "loss_generator_total": _check_generator_total,
    "loss_f_adv": _check_f_adv,
    "feature_discriminator_loss": _check_d_f,
    "variance": _check_variance,
    "loss_cvd": _check_cvd,
    "loss_cls": _check_cls,
    "loss_final": _check_final,
}


def loss_suite(points: int = 10, seed: int = 0) -> dict[str, float]:
    """Worst relative error per loss over ``points`` random instances."""
    rng = np.random.default_rng(seed)
    return {name: max(check(np.random.default_rng(rng.integers(2**63))) for _ in range(points))
            for name, check in LOSS_CHECKS.items()}

"""Training objectives: reconstruction, adversarial, perceptual.

The generator objective is a weighted sum of a full-resolution L1 term, a
low-resolution MSE term on the volume-rendered image, a feature-space
perceptual term, and a non-saturating patch-GAN term.  Zero-weight terms are
never evaluated; `combined_loss` enforces that convention.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, avg_downsample2x, conv2d, leaky_relu
from .checkpoint import load_container

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class LossWeights:
    high: float = 1.0        # full-resolution L1
    adversarial: float = 0.02
    perceptual: float = 0.5
    low: float = 1.0         # low-resolution MSE on the rendered image

    def __post_init__(self):
        for name in ("high", "adversarial", "perceptual", "low"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def _as_constant(x) -> Tensor:
    if isinstance(x, Tensor):
        return Tensor(x.data)
    return Tensor(np.asarray(x))


def l1_loss(pred, target):
    return ad.tmean(ad.absolute(ad.sub(pred, _as_constant(target))))


def mse_loss(pred, target):
    err = ad.sub(pred, _as_constant(target))
    return ad.tmean(ad.mul(err, err))


def bce_with_logits(logits, real: bool):
    """Mean binary cross-entropy against a constant label, stable form.

    For label y and logit z this is softplus(z) - y * z, which equals
    -log sigmoid(z) for y = 1 and -log(1 - sigmoid(z)) for y = 0.
    """
    loss = ad.softplus(logits)
    if real:
        loss = ad.sub(loss, logits)
    return ad.tmean(loss)


def combined_loss(weights: LossWeights, **terms):
    """Weighted sum of named loss terms; zero-weight terms must be omitted.

    Returns (total Tensor, {name: float} breakdown of unweighted values).
    """
    valid = {"high", "adversarial", "perceptual", "low"}
    unknown = set(terms) - valid
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    total = None
    breakdown = {}
    for name in sorted(valid):
        weight = getattr(weights, name)
        term = terms.get(name)
        if weight == 0.0:
            if term is not None:
                raise ValueError(f"loss term '{name}' has zero weight and must "
                                 "not be computed")
            continue
        if term is None:
            raise ValueError(f"loss term '{name}' has weight {weight} but was "
                             "not provided")
        breakdown[name] = float(term.data)
        scaled = ad.mul(term, weight)
        total = scaled if total is None else ad.add(total, scaled)
    if total is None:
        raise ValueError("all loss weights are zero")
    return total, breakdown


# --- patch discriminator -----------------------------------------------------

@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3
    widths: tuple = (32, 64, 128, 256)

    def __post_init__(self):
        if self.in_channels < 1 or not self.widths:
            raise ValueError("discriminator needs input channels and layers")


class Discriminator:
    """Stride-2 conv stack ending in a 1x1 logit map (patch decisions)."""

    def __init__(self, config: DiscriminatorConfig | None = None, *, rng=None,
                 dtype=np.float32):
        self.config = config or DiscriminatorConfig()
        rng = rng if rng is not None else np.random.default_rng()
        self.convs = []
        c_in = self.config.in_channels
        for c_out in self.config.widths:
            fan_in = c_in * 9
            w = (rng.standard_normal((c_out, c_in, 3, 3))
                 * np.sqrt(2.0 / fan_in)).astype(dtype)
            self.convs.append((Tensor(w, requires_grad=True),
                               Tensor(np.zeros(c_out, dtype=dtype),
                                      requires_grad=True)))
            c_in = c_out
        w_out = (rng.standard_normal((1, c_in, 1, 1))
                 * np.sqrt(1.0 / c_in)).astype(dtype)
        self.w_out = Tensor(w_out, requires_grad=True)
        self.b_out = Tensor(np.zeros(1, dtype=dtype), requires_grad=True)

    def parameters(self) -> dict:
        params = {}
        for i, (w, b) in enumerate(self.convs):
            params[f"discriminator.conv{i}.w"] = w
            params[f"discriminator.conv{i}.b"] = b
        params["discriminator.conv_out.w"] = self.w_out
        params["discriminator.conv_out.b"] = self.b_out
        return params

    def __call__(self, x):
        min_side = 2 ** len(self.config.widths)
        if min(x.shape[1], x.shape[2]) < min_side:
            raise ValueError(f"discriminator needs patches of at least "
                             f"{min_side}px, got {x.shape[1]}x{x.shape[2]}")
        for w, b in self.convs:
            x = leaky_relu(conv2d(x, w, b, stride=2))
        return conv2d(x, self.w_out, self.b_out)


def adversarial_losses(disc: Discriminator, real, fake):
    """Non-saturating GAN losses for one real/fake patch pair.

    The generator loss scores the live fake; the discriminator loss scores a
    detached copy so its gradient never reaches the generator.
    """
    loss_g = bce_with_logits(disc(fake), real=True)
    loss_d = ad.add(bce_with_logits(disc(fake.detach()), real=False),
                    bce_with_logits(disc(_as_constant(real)), real=True))
    return loss_g, loss_d


def discriminator_accuracy(disc: Discriminator, real, fake) -> float:
    """Fraction of patch logits classified correctly (no gradients)."""
    real_logits = disc(_as_constant(real)).data
    fake_logits = disc(Tensor(fake.data if isinstance(fake, Tensor)
                              else np.asarray(fake))).data
    correct = np.sum(real_logits > 0) + np.sum(fake_logits <= 0)
    return float(correct) / (real_logits.size + fake_logits.size)


# --- perceptual feature extractors -------------------------------------------

def _filter_bank() -> np.ndarray:
    """Eight zero-sum 3x3 filters: edges, diagonals, center-surround, lines."""
    sobel_x = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]) / 4.0
    diag = np.array([[-2, -1, 0], [-1, 0, 1], [0, 1, 2]]) / 4.0
    anti = np.array([[0, -1, -2], [1, 0, -1], [2, 1, 0]]) / 4.0
    lap4 = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]]) / 4.0
    surround = np.array([[-1, -1, -1], [-1, 8, -1], [-1, -1, -1]]) / 8.0
    line_h = np.array([[-1, -1, -1], [2, 2, 2], [-1, -1, -1]]) / 4.0
    bank = np.stack([sobel_x, sobel_x.T, diag, anti, lap4, surround,
                     line_h, line_h.T])
    return bank[:, None].astype(np.float32)


def luma(img):
    """[3,H,W] -> [1,H,W] luminance."""
    r = ad.narrow(img, 0, 0, 1)
    g = ad.narrow(img, 0, 1, 1)
    b = ad.narrow(img, 0, 2, 1)
    return ad.add(ad.add(ad.mul(r, LUMA_WEIGHTS[0]), ad.mul(g, LUMA_WEIGHTS[1])),
                  ad.mul(b, LUMA_WEIGHTS[2]))


class FilterBankExtractor:
    """Fixed oriented-edge filter bank over a small luminance pyramid."""

    def __init__(self, n_levels: int = 2, dtype=np.float32):
        if n_levels < 1:
            raise ValueError("need at least one pyramid level")
        self.n_levels = n_levels
        self.kernels = Tensor(_filter_bank().astype(dtype))
        self.bias = Tensor(np.zeros(self.kernels.shape[0], dtype=dtype))

    def features(self, img) -> list:
        x = luma(img)
        maps = []
        for level in range(self.n_levels):
            maps.append(conv2d(x, self.kernels, self.bias))
            if level + 1 < self.n_levels:
                x = avg_downsample2x(x)
        return maps


class ConvFeatureExtractor:
    """Conv+leaky-relu feature stack with externally supplied weights.

    Weights come from a model container holding sections named
    features.conv<i>.w / features.conv<i>.b; stage activations are the
    feature maps.  Lets a separately trained backbone drive the perceptual
    term without changing the loss code.
    """

    def __init__(self, tensors: dict):
        self.layers = []
        i = 0
        while f"features.conv{i}.w" in tensors:
            w = tensors[f"features.conv{i}.w"]
            if f"features.conv{i}.b" not in tensors:
                raise ValueError(f"missing bias for features.conv{i}")
            self.layers.append((Tensor(w), Tensor(tensors[f"features.conv{i}.b"])))
            i += 1
        if not self.layers:
            raise ValueError("no features.conv<i>.w sections found")

    @classmethod
    def from_file(cls, path):
        tensors, _ = load_container(path)
        return cls(tensors)

    def features(self, img) -> list:
        maps = []
        x = img
        for w, b in self.layers:
            x = leaky_relu(conv2d(x, w, b, stride=2))
            maps.append(x)
        return maps


def perceptual_loss(extractor, pred, target):
    """Mean MSE between feature maps; gradient flows through pred only."""
    f_pred = extractor.features(pred)
    f_tgt = extractor.features(_as_constant(target))
    total = None
    for a, b in zip(f_pred, f_tgt):
        term = mse_loss(a, b)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / len(f_pred))

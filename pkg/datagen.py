"""
Instance generators.

All randomness goes through a named numpy bit generator so every instance is
reproducible from (seed, rng_spec).
"""

from dataclasses import dataclass
import logging
import os

import numpy as np
from PIL import Image
from scipy.spatial.distance import cdist

from config import Config
from core import (
    ConfigError,
    CyclicProblem,
    DenseProblem,
    DimensionError,
    InfeasibleError,
    ProbabilityVector,
)

logger = logging.getLogger(__name__)

BIT_GENERATORS = {
    'pcg64': np.random.PCG64,
    'philox': np.random.Philox,
    'sfc64': np.random.SFC64,
    'mt19937': np.random.MT19937,
}

METRICS = {
    'manhattan': 'cityblock',
    'euclidean': 'euclidean',
    'chebyshev': 'chebyshev',
}

SYMMETRY_ORDERS = {
    'mirror': 2,
    'rotation': 4,
}


def make_rng(seed=0, rng_spec=None):
    spec = (rng_spec or Config.RNG_SPEC).lower()
    bit_generator = BIT_GENERATORS.get(spec)
    if bit_generator is None:
        raise ConfigError(f"unknown rng_spec {spec!r}; expected one of {sorted(BIT_GENERATORS)}")
    return np.random.Generator(bit_generator(seed))


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=float)
        if pixels.ndim != 2 or pixels.size == 0:
            raise DimensionError(f"gray image must be a non-empty 2-D grid, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)) or np.any(pixels < 0):
            raise InfeasibleError("pixel intensities must be finite and non-negative")
        pixels.flags.writeable = False
        object.__setattr__(self, 'pixels', pixels)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PixelOrdering:
    """Bijection k -> (row, col); block t is the t-th symmetry image of block 0."""

    coords: np.ndarray
    symmetry: str
    height: int
    width: int

    @property
    def order(self):
        return SYMMETRY_ORDERS[self.symmetry]

    @property
    def block_size(self):
        return len(self.coords) // self.order


def mirror_ordering(h, w):
    """Left half column by column, then the right half as its left-right mirror."""
    if h < 1 or w < 2 or w % 2:
        raise DimensionError(f"mirror ordering needs an even width, got {h}x{w}")
    k = np.arange(h * w)
    half = h * w // 2
    rows = k % h
    cols = np.where(k < half, k // h, 3 * w // 2 - k // h - 1)
    return PixelOrdering(np.stack([rows, cols], axis=1), 'mirror', h, w)


def rotation_ordering(h, w):
    """
    Top-left quadrant column by column; block t is that sequence rotated
    t quarter turns by (r, c) -> (c, s - 1 - r).
    """
    if h != w or h < 2 or h % 2:
        raise DimensionError(f"rotation ordering needs an even square grid, got {h}x{w}")
    s = h
    q = s // 2
    k = np.arange(q * q)
    block = np.stack([k % q, k // q], axis=1)
    blocks = [block]
    for _ in range(3):
        r, c = blocks[-1][:, 0], blocks[-1][:, 1]
        blocks.append(np.stack([c, s - 1 - r], axis=1))
    return PixelOrdering(np.concatenate(blocks), 'rotation', h, w)


def make_ordering(h, w, symmetry='mirror'):
    if symmetry == 'mirror':
        return mirror_ordering(h, w)
    if symmetry == 'rotation':
        return rotation_ordering(h, w)
    raise ConfigError(f"unknown symmetry {symmetry!r}; expected mirror or rotation")


def _check_grid(ordering, h, w):
    if (ordering.height, ordering.width) != (h, w):
        raise DimensionError(
            f"ordering built for {ordering.height}x{ordering.width}, image is {h}x{w}"
        )


def image_to_marginal(img, ordering):
    """Intensities read in ordering order, normalized to sum 1."""
    _check_grid(ordering, img.height, img.width)
    values = img.pixels[ordering.coords[:, 0], ordering.coords[:, 1]]
    total = values.sum()
    if total <= 0:
        raise InfeasibleError("image has no mass")
    return ProbabilityVector(values / total)


def grid_cost(h, w, metric='euclidean', ordering=None):
    """Distances between pixel positions listed in ordering order."""
    name = METRICS.get(metric)
    if name is None:
        raise ConfigError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}")
    if ordering is None:
        rows, cols = np.divmod(np.arange(h * w), w)
        coords = np.stack([rows, cols], axis=1)
    else:
        _check_grid(ordering, h, w)
        coords = ordering.coords
    return cdist(coords.astype(float), coords.astype(float), metric=name)


def gen_synthetic(m, n, seed=0, rng_spec=None):
    """
    Random order-n cyclic problem: masses uniform on [0, 1) scaled to sum
    1/n, cost blocks Gaussian(3, 5) shifted to be non-negative.
    """
    if m < 1 or n < 1:
        raise DimensionError(f"m and n must be positive, got m={m}, n={n}")
    rng = make_rng(seed, rng_spec)
    alpha = rng.random(m)
    beta = rng.random(m)
    blocks = rng.normal(3.0, 5.0, size=(n, m, m))
    lowest = blocks.min()
    if lowest < 0:
        blocks = blocks + abs(lowest)
    return CyclicProblem(
        alpha=alpha / (n * alpha.sum()),
        beta=beta / (n * beta.sum()),
        cost_blocks=blocks,
    )


def gen_counter_example(scale=1.0, m=1):
    """
    Order-2 family where crossing blocks is cheaper than staying inside one:
    C_0 = scale * (5 + |i - j|), C_1 = scale * (1 + |i - j|), uniform masses.
    """
    if not scale > 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    if m < 1:
        raise DimensionError("m must be positive")
    offset = np.abs(np.subtract.outer(np.arange(m), np.arange(m))).astype(float)
    blocks = np.stack([scale * (5.0 + offset), scale * (1.0 + offset)])
    uniform = np.full(m, 1.0 / (2 * m))
    return CyclicProblem(alpha=uniform, beta=uniform, cost_blocks=blocks)


def load_image(path):
    """Read a gray image from PGM (any Pillow-readable gray format) or a CSV grid."""
    if os.path.splitext(path)[1].lower() == '.csv':
        pixels = np.loadtxt(path, delimiter=',', ndmin=2)
    else:
        with Image.open(path) as img:
            if img.mode not in ('L', 'I', 'I;16', 'F', '1'):
                raise DimensionError(f"{path} is a {img.mode} image; only gray images are supported")
            pixels = np.asarray(img, dtype=float)
    logger.info(f"Loaded {pixels.shape[0]}x{pixels.shape[1]} image from {path}")
    return GrayImage(pixels)


def save_image(img, path):
    """Write a gray image as 8-bit PGM (rescaled) or as a CSV grid."""
    if os.path.splitext(path)[1].lower() == '.csv':
        np.savetxt(path, img.pixels, delimiter=',', fmt='%.17g')
    else:
        top = img.pixels.max()
        scaled = img.pixels if top <= 255 else img.pixels * (255.0 / top)
        Image.fromarray(np.rint(scaled).astype(np.uint8)).save(path)
    logger.info(f"Saved image to {path}")


def gen_symmetric_image(h, w, symmetry='mirror', seed=0, rng_spec=None, low=1.0, high=255.0):
    """Random gray image invariant under the symmetry of the matching ordering."""
    ordering = make_ordering(h, w, symmetry)
    rng = make_rng(seed, rng_spec)
    block = rng.uniform(low, high, size=ordering.block_size)
    pixels = np.zeros((h, w))
    pixels[ordering.coords[:, 0], ordering.coords[:, 1]] = np.tile(block, ordering.order)
    return GrayImage(pixels)


def perturb_marginal(v, noise, seed=0, rng_spec=None):
    """Multiply each entry by 1 + noise * U[-1, 1) and renormalize to sum 1."""
    if not 0 <= noise < 1:
        raise ConfigError(f"relative noise must lie in [0, 1), got {noise}")
    v = np.asarray(v, dtype=float)
    rng = make_rng(seed, rng_spec)
    noisy = v * (1.0 + noise * rng.uniform(-1.0, 1.0, size=v.shape))
    return ProbabilityVector(noisy / noisy.sum())


def is_periodic(v, n):
    v = np.asarray(v)
    if n < 1 or len(v) % n:
        return False
    m = len(v) // n
    return bool(np.array_equal(np.tile(v[:m], n), v))


def image_pair_problem(img_a, img_b, ordering, metric='euclidean'):
    """
    Dense problem between two gray images. The flag tells whether both
    marginals are exactly periodic under the ordering's symmetry.
    """
    a = image_to_marginal(img_a, ordering).entries
    b = image_to_marginal(img_b, ordering).entries
    cost = grid_cost(ordering.height, ordering.width, metric, ordering)
    exact = is_periodic(a, ordering.order) and is_periodic(b, ordering.order)
    if not exact:
        logger.warning(f"Image marginals are only approximately {ordering.symmetry}-symmetric")
    return DenseProblem(a=a, b=b, cost=cost, order=ordering.order), exact


def gen_image_problem(h, w, symmetry='mirror', metric='euclidean', noise=0.0, seed=0, rng_spec=None):
    """Two random symmetric images, optionally with marginals perturbed by relative noise."""
    ordering = make_ordering(h, w, symmetry)
    img_a = gen_symmetric_image(h, w, symmetry, seed=2 * seed, rng_spec=rng_spec)
    img_b = gen_symmetric_image(h, w, symmetry, seed=2 * seed + 1, rng_spec=rng_spec)
    dense, exact = image_pair_problem(img_a, img_b, ordering, metric)
    if noise > 0:
        dense = DenseProblem(
            a=perturb_marginal(dense.a, noise, seed=2 * seed, rng_spec=rng_spec).entries,
            b=perturb_marginal(dense.b, noise, seed=2 * seed + 1, rng_spec=rng_spec).entries,
            cost=dense.cost,
            order=dense.order,
        )
        exact = False
    return dense, ordering.order, exact

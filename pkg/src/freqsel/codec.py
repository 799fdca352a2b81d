"""JPEG-aligned frequency-domain input codec.

RGB -> full-range YCbCr -> level shift by 128 -> orthonormal 8x8 DCT-II per
block -> one channel per (u, v) frequency. Within a component the channel
index is ``8*u + v`` (u vertical, v horizontal); components are stacked
Y, Cb, Cr. No chroma subsampling.
"""

import math

import numpy as np

from .errors import ConfigError, InsufficientDataError, ParseError, ShapeError, StateError

COMPONENTS = ("Y", "CB", "CR")
EPS = 1e-5

RGB_TO_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])
YCBCR_TO_RGB = np.linalg.inv(RGB_TO_YCBCR)


def dct_matrix():
    """Orthonormal DCT-II basis: ``D[u, i] = a(u) cos((2i+1) u pi / 16)``."""
    d = np.empty((8, 8))
    for u in range(8):
        a = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
        for i in range(8):
            d[u, i] = a * math.cos((2 * i + 1) * u * math.pi / 16)
    return d


DCT = dct_matrix()


# color -------------------------------------------------------------------------

def rgb_to_ycbcr(img):
    """H x W x 3 pixels -> H x W x 3 float planes (Y, Cb, Cr), unrounded."""
    rgb = np.asarray(img, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError("expected an H x W x 3 image")
    return rgb @ RGB_TO_YCBCR.T + YCBCR_OFFSET


def ycbcr_to_rgb(planes, rounded=True):
    """Inverse affine map; rounds to nearest and clamps to 0..255 by default."""
    ycc = np.asarray(planes, dtype=np.float64)
    rgb = (ycc - YCBCR_OFFSET) @ YCBCR_TO_RGB.T
    if not rounded:
        return rgb
    return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)


# transforms --------------------------------------------------------------------

def dct8x8(block):
    """Level-shifted orthonormal 2-D DCT of one 8x8 block (or a stack ... x 8 x 8)."""
    x = np.asarray(block, dtype=np.float64) - 128.0
    return DCT @ x @ DCT.T


def idct8x8(coeffs):
    c = np.asarray(coeffs, dtype=np.float64)
    return DCT.T @ c @ DCT + 128.0


def dct8x8_naive(block):
    """Direct four-loop definition; slow, used only as an oracle."""
    x = [[float(v) - 128.0 for v in row] for row in np.asarray(block)]
    out = np.empty((8, 8))
    for u in range(8):
        au = math.sqrt(1 / 8) if u == 0 else math.sqrt(2 / 8)
        for v in range(8):
            av = math.sqrt(1 / 8) if v == 0 else math.sqrt(2 / 8)
            s = 0.0
            for i in range(8):
                ci = math.cos((2 * i + 1) * u * math.pi / 16)
                for j in range(8):
                    s += x[i][j] * ci * math.cos((2 * j + 1) * v * math.pi / 16)
            out[u, v] = au * av * s
    return out


def to_blocks(plane):
    """H x W plane -> (H/8) x (W/8) x 8 x 8 block grid."""
    p = np.asarray(plane)
    h, w = p.shape
    if h % 8 or w % 8:
        raise ShapeError(f"plane extent {h}x{w} is not a multiple of 8")
    return p.reshape(h // 8, 8, w // 8, 8).swapaxes(1, 2)


def from_blocks(blocks):
    b = np.asarray(blocks)
    bh, bw = b.shape[:2]
    return b.swapaxes(1, 2).reshape(bh * 8, bw * 8)


def pack_channels(block_coeffs):
    """(H/8) x (W/8) x 8 x 8 coefficient grid -> (H/8) x (W/8) x 64 tensor."""
    b = np.asarray(block_coeffs)
    if b.ndim != 4 or b.shape[2:] != (8, 8):
        raise ShapeError("expected a grid of 8x8 blocks")
    return b.reshape(b.shape[0], b.shape[1], 64)


def unpack_channels(tensor):
    t = np.asarray(tensor)
    if t.ndim != 3 or t.shape[2] != 64:
        raise ShapeError("expected an (H/8) x (W/8) x 64 tensor")
    return t.reshape(t.shape[0], t.shape[1], 8, 8)


def pad_to_block(img):
    """Edge-replicate an H x W x C image up to multiples of 8."""
    a = np.asarray(img)
    h, w = a.shape[:2]
    ph, pw = (-h) % 8, (-w) % 8
    if ph == 0 and pw == 0:
        return a
    return np.pad(a, ((0, ph), (0, pw), (0, 0)), mode="edge")


def planes_to_channels(ycc):
    """H x W x 3 YCbCr planes -> (H/8) x (W/8) x 192 coefficient tensor."""
    parts = [pack_channels(dct8x8(to_blocks(ycc[:, :, k]))) for k in range(3)]
    return np.concatenate(parts, axis=2)


def channels_to_planes(tensor):
    parts = [from_blocks(idct8x8(unpack_channels(tensor[:, :, 64 * k:64 * (k + 1)])))
             for k in range(3)]
    return np.stack(parts, axis=2)


def encode_image(img, mask=None, stats=None):
    """RGB image -> channel tensor of the channels kept by ``mask``, optionally standardized.

    ``mask`` is a :class:`~freqsel.select.SelectionMask` (``None`` keeps all
    192 channels); ``stats`` a finalized :class:`ChannelStats` over exactly
    the kept channels.
    """
    ycc = rgb_to_ycbcr(pad_to_block(img))
    t = planes_to_channels(ycc)
    if mask is not None:
        t = t[:, :, mask.flat_indices()]
    if stats is not None:
        if stats.channels != t.shape[2]:
            raise ConfigError(f"stats cover {stats.channels} channels, tensor has {t.shape[2]}")
        t = stats.standardize(t)
    return t


def decode_tensor(tensor, rounded=True):
    """Inverse of an all-channel, unstandardized ``encode_image``."""
    t = np.asarray(tensor, dtype=np.float64)
    if t.ndim != 3 or t.shape[2] != 192:
        raise ShapeError("decode needs all 192 channels")
    return ycbcr_to_rgb(channels_to_planes(t), rounded=rounded)


# running statistics --------------------------------------------------------------

class ChannelStats:
    """Per-channel running mean and sum of squared deviations.

    Each update folds in every spatial position of a sample using the
    pairwise (Chan et al.) form of Welford's recurrence, which is exact for
    merging a batch with the running state.
    """

    def __init__(self, channels):
        self.channels = channels
        self.n = 0
        self.mean = np.zeros(channels)
        self.m2 = np.zeros(channels)
        self.finalized = False

    @property
    def variance(self):
        return self.m2 / self.n if self.n else np.zeros(self.channels)

    def update(self, sample):
        if self.finalized:
            raise StateError("stats already finalized")
        x = np.asarray(sample, dtype=np.float64)
        if x.shape[-1] != self.channels:
            raise ShapeError(f"sample has {x.shape[-1]} channels, stats expect {self.channels}")
        x = x.reshape(-1, self.channels)
        nb = x.shape[0]
        mb = x.mean(axis=0)
        m2b = ((x - mb) ** 2).sum(axis=0)
        self._merge(nb, mb, m2b)
        return self

    def merge(self, other):
        if other.channels != self.channels:
            raise ShapeError("channel count mismatch")
        if self.finalized:
            raise StateError("stats already finalized")
        self._merge(other.n, other.mean, other.m2)
        return self

    def _merge(self, nb, mb, m2b):
        if nb == 0:
            return
        na = self.n
        n = na + nb
        delta = mb - self.mean
        self.mean = self.mean + delta * (nb / n)
        self.m2 = self.m2 + m2b + delta ** 2 * (na * nb / n)
        self.n = n

    def finalize(self):
        if self.finalized:
            raise StateError("stats already finalized")
        if self.n < 2:
            raise InsufficientDataError("need at least two observations per channel")
        self.finalized = True
        return self

    def standardize(self, t):
        return (np.asarray(t, dtype=np.float64) - self.mean) / np.sqrt(self.variance + EPS)

    def subset(self, indices):
        """Stats restricted to the given channel positions."""
        s = ChannelStats(len(indices))
        s.n, s.mean, s.m2 = self.n, self.mean[indices].copy(), self.m2[indices].copy()
        s.finalized = self.finalized
        return s

    def dumps(self):
        lines = [f"FDSTATS 1 {self.channels}"]
        var = self.variance
        for i in range(self.channels):
            lines.append(f"{i} {float(self.mean[i])!r} {float(var[i])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ParseError("empty stats file", 1)
        head = lines[0].split()
        if len(head) != 3 or head[0] != "FDSTATS" or head[1] != "1":
            raise ParseError("bad stats header", 1)
        c = int(head[2])
        if len(lines) != c + 1:
            raise ParseError(f"expected {c} channel lines, found {len(lines) - 1}")
        s = cls(c)
        var = np.empty(c)
        for lineno, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if len(parts) != 3 or int(parts[0]) != lineno - 2:
                raise ParseError("malformed channel line", lineno)
            s.mean[lineno - 2] = float(parts[1])
            var[lineno - 2] = float(parts[2])
            if var[lineno - 2] < 0:
                raise ParseError("negative variance", lineno)
        # store as n=1 with m2 = variance so that variance round-trips bit-exactly
        s.n = 1
        s.m2 = var
        s.finalized = True
        return s


def compute_stats(tensors):
    stats = None
    for t in tensors:
        if stats is None:
            stats = ChannelStats(t.shape[-1])
        stats.update(t)
    if stats is None:
        raise InsufficientDataError("no samples")
    return stats.finalize()

"""Persistence formats and the synthetic band-signature dataset."""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import codec
from . import rng as _rng
from .codec import COMPONENTS
from .errors import ConfigError, CorruptionError, FormatError, ParseError

# PPM ----------------------------------------------------------------------------


def ppm_write(img):
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError("expected an H x W x 3 image")
    if a.dtype != np.uint8:
        if np.any(a < 0) or np.any(a > 255):
            raise ValueError("pixel values must lie in 0..255")
        a = a.astype(np.uint8)
    h, w = a.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(a).tobytes()


def ppm_read(data):
    """Decode a binary P6 image with maxval 255 into an H x W x 3 uint8 array."""
    data = bytes(data)
    if data[:2] != b"P6":
        raise FormatError(f"unsupported image format {data[:2]!r}; only binary P6 is read")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"malformed PPM header at byte {pos}")
        fields.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ParseError(f"missing whitespace after header at byte {pos}")
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    need = 3 * w * h
    payload = data[pos:pos + need]
    if len(payload) < need:
        raise ParseError(f"truncated payload at byte offset {pos + len(payload)}: "
                         f"expected {need} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


# tensor files --------------------------------------------------------------------

MAGIC = b"FDT1"


def tensor_write(t):
    a = np.asarray(getattr(t, "data", t), dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("cannot serialize non-finite values")
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.astype("<f4").tobytes()


def tensor_read(data):
    data = bytes(data)
    if data[:4] != MAGIC:
        raise FormatError(f"bad tensor magic {data[:4]!r}")
    if len(data) < 8:
        raise CorruptionError("truncated tensor header")
    (rank,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + 4 * rank:
        raise CorruptionError("truncated tensor extents")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    off = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(data) - off != 4 * count:
        raise CorruptionError(f"payload holds {len(data) - off} bytes, extents need {4 * count}")
    return np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64).reshape(dims)


# dataset manifest ----------------------------------------------------------------

REGIMES = ("anywhere", "high_only")


@dataclass
class DatasetManifest:
    k: int
    m: int
    amplitude: float
    sigma: float
    height: int
    width: int
    seed: int
    regime: str
    signatures: list                             # per class: list of (component, index)
    samples: list = field(default_factory=list)  # (path, label)
    images: list = None                          # in-memory pixels, parallel to samples

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if len(self.signatures) != self.k:
            raise ConfigError("need one signature set per class")
        seen = set()
        for sig in self.signatures:
            for comp, idx in sig:
                if comp not in COMPONENTS or not 0 <= idx <= 63:
                    raise ConfigError(f"bad signature channel {comp} {idx}")
                if (comp, idx) in seen:
                    raise ConfigError(f"signature channel {comp} {idx} shared by two classes")
                seen.add((comp, idx))
        for _, label in self.samples:
            if not 0 <= label < self.k:
                raise ConfigError(f"label {label} outside 0..{self.k - 1}")

    @property
    def labels(self):
        return np.array([lab for _, lab in self.samples], dtype=np.int64)

    def signature_flat(self, cls=None):
        classes = range(self.k) if cls is None else [cls]
        return sorted(64 * COMPONENTS.index(c) + i for k in classes for c, i in self.signatures[k])

    def load_images(self, root=None):
        if self.images is not None:
            return self.images
        root = Path(root or ".")
        return [ppm_read((root / path).read_bytes()) for path, _ in self.samples]

    def subset(self, indices):
        idx = list(indices)
        return DatasetManifest(
            self.k, self.m, self.amplitude, self.sigma, self.height, self.width,
            self.seed, self.regime, self.signatures,
            [self.samples[i] for i in idx],
            None if self.images is None else [self.images[i] for i in idx])

    def dumps(self):
        lines = [f"FDDATA 1 {self.k} {self.m} {float(self.amplitude)!r} {float(self.sigma)!r} "
                 f"{self.height} {self.width} {self.seed} {self.regime}"]
        for cls, sig in enumerate(self.signatures):
            lines.extend(f"SIG {cls} {comp} {idx}" for comp, idx in sig)
        lines.extend(f"SAMPLE {path} {label}" for path, label in self.samples)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text):
        lines = text.splitlines()
        if not lines:
            raise ParseError("empty manifest", 1)
        head = lines[0].split()
        if len(head) != 10 or head[:2] != ["FDDATA", "1"]:
            raise ParseError("bad manifest header", 1)
        try:
            k, m = int(head[2]), int(head[3])
            amp, sigma = float(head[4]), float(head[5])
            h, w, seed = int(head[6]), int(head[7]), int(head[8])
        except ValueError:
            raise ParseError("bad manifest header field", 1) from None
        sigs = [[] for _ in range(k)]
        samples = []
        for lineno, ln in enumerate(lines[1:], start=2):
            parts = ln.split()
            if not parts:
                continue
            try:
                if parts[0] == "SIG" and len(parts) == 4:
                    c = int(parts[1])
                    if not 0 <= c < k:
                        raise ConfigError(f"line {lineno}: signature class {c} outside 0..{k - 1}")
                    sigs[c].append((parts[2].upper(), int(parts[3])))
                elif parts[0] == "SAMPLE" and len(parts) == 3:
                    samples.append((parts[1], int(parts[2])))
                else:
                    raise ParseError(f"unrecognized record {parts[0]!r}", lineno)
            except ValueError as exc:
                if isinstance(exc, (ParseError, ConfigError)):
                    raise
                raise ParseError(str(exc), lineno) from None
        return cls(k, m, amp, sigma, h, w, seed, head[9], sigs, samples)


def eligible_channels(regime):
    """(component, index) pairs a signature may use under ``regime``."""
    out = []
    for comp in COMPONENTS:
        for idx in range(64):
            u, v = divmod(idx, 8)
            # a 2x2 box average cancels a cosine pair only at frequency 4 on
            # that axis; other high frequencies survive as aliases
            if regime == "high_only" and (u + v < 8 or 4 not in (u, v)):
                continue
            out.append((comp, idx))
    return out


def render_sample(signature, amplitude, sigma, height, width, gen):
    """Build one image in the coefficient domain and invert it to 8-bit RGB."""
    bh, bw = height // 8, width // 8
    coeffs = np.zeros((bh, bw, 192))
    for comp, idx in signature:
        signs = np.where(gen.random((bh, bw)) < 0.5, -1.0, 1.0)
        coeffs[:, :, 64 * COMPONENTS.index(comp) + idx] = amplitude * signs
    if sigma > 0:
        coeffs += sigma * _rng.normal(gen, coeffs.shape)
    return codec.decode_tensor(coeffs)


def gen_band_dataset(k=4, samples_per_class=100, m=3, amplitude=64.0, sigma=4.0,
                     extents=(64, 64), seed=0, regime="anywhere", out_dir=None):
    """Generate a labeled dataset whose classes differ only in which channels carry energy.

    Each class owns ``m`` signature channels (disjoint across classes). Every
    8x8 block of a sample carries ``+-amplitude`` (random sign) on its class's
    channels plus Gaussian noise ``sigma`` on all 192 channels. Samples are
    interleaved by class. With ``out_dir`` set, images are written as PPM
    files named in the manifest; they are always kept in memory as well.
    """
    h, w = extents
    if h % 8 or w % 8 or h <= 0 or w <= 0:
        raise ConfigError("extents must be positive multiples of 8")
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}")
    pool = eligible_channels(regime)
    if k * m > len(pool):
        raise ConfigError(f"cannot draw {k} disjoint signatures of size {m} from {len(pool)} channels")
    perm = _rng.stream(seed, "signature").permutation(len(pool))
    signatures = [sorted((pool[j] for j in perm[c * m:(c + 1) * m]),
                         key=lambda ci: (COMPONENTS.index(ci[0]), ci[1])) for c in range(k)]
    samples, images = [], []
    width_digits = len(str(k * samples_per_class))
    for i in range(samples_per_class * k):
        label = i % k
        img = render_sample(signatures[label], amplitude, sigma, h, w, _rng.stream(seed, "data", i))
        samples.append((f"img_{i:0{width_digits}d}.ppm", label))
        images.append(img)
    manifest = DatasetManifest(k, m, float(amplitude), float(sigma), h, w, seed, regime,
                               signatures, samples, images)
    if out_dir is not None:
        write_dataset(manifest, out_dir)
    return manifest


def write_dataset(manifest, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (path, _), img in zip(manifest.samples, manifest.images):
        (out / path).write_bytes(ppm_write(img))
    path = out / "manifest.txt"
    path.write_text(manifest.dumps())
    return path


def read_dataset(manifest_path):
    p = Path(manifest_path)
    manifest = DatasetManifest.loads(p.read_text())
    manifest.images = manifest.load_images(p.parent)
    return manifest


def split_per_class(manifest, n_train):
    """First ``n_train`` samples of each class train, the rest test."""
    seen = [0] * manifest.k
    train, test = [], []
    for i, (_, label) in enumerate(manifest.samples):
        (train if seen[label] < n_train else test).append(i)
        seen[label] += 1
    return manifest.subset(train), manifest.subset(test)

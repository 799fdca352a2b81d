"""Static frequency-channel selection masks and selection heat maps."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codec import COMPONENTS
from .errors import ConfigError, InsufficientDataError, ParseError


def zigzag_order():
    """JPEG zigzag scan of the 8x8 grid as row-major channel indices."""
    order = []
    for s in range(15):
        cells = [(u, s - u) for u in range(8) if 0 <= s - u < 8]
        if s % 2 == 0:
            cells.reverse()  # even anti-diagonals run bottom-left -> top-right
        order.extend(8 * u + v for u, v in cells)
    return order


ZIGZAG = zigzag_order()


@dataclass(frozen=True)
class SelectionMask:
    y: tuple = ()
    cb: tuple = ()
    cr: tuple = ()

    def __post_init__(self):
        for name in ("y", "cb", "cr"):
            vals = tuple(sorted(int(i) for i in getattr(self, name)))
            if len(set(vals)) != len(vals):
                raise ConfigError(f"duplicate index in {name}")
            if vals and (vals[0] < 0 or vals[-1] > 63):
                raise ConfigError(f"index out of range in {name}")
            object.__setattr__(self, name, vals)

    @classmethod
    def all_pass(cls):
        full = tuple(range(64))
        return cls(full, full, full)

    @property
    def counts(self):
        return (len(self.y), len(self.cb), len(self.cr))

    def __len__(self):
        return sum(self.counts)

    def components(self):
        return (self.y, self.cb, self.cr)

    def flat_indices(self):
        """Positions in the 192-channel Y|Cb|Cr tensor, in tensor order."""
        return np.array([64 * k + i for k, comp in enumerate(self.components()) for i in comp],
                        dtype=np.int64)

    def bits(self):
        b = np.zeros(192)
        b[self.flat_indices()] = 1.0
        return b

    @classmethod
    def from_flat(cls, indices):
        parts = [[], [], []]
        for i in indices:
            parts[int(i) // 64].append(int(i) % 64)
        return cls(*parts)

    def dumps(self):
        lines = ["FDMASK 1"]
        for tag, comp in zip(COMPONENTS, self.components()):
            lines.extend(f"{tag} {i}" for i in comp)
        return "\n".join(lines) + "\n"


def _check_counts(counts):
    for k in counts:
        if not 0 <= k <= 64:
            raise ConfigError(f"channel count {k} outside 0..64")


def _square(k):
    s = 0
    while s * s < k:
        s += 1
    inner = [8 * u + v for u in range(s - 1) for v in range(s - 1)]
    # trim only the outer shell, in reverse row-major order, so masks nest
    shell = [8 * u + v for u in range(s) for v in range(s) if max(u, v) == s - 1]
    return inner + shell[:k - len(inner)] if s else []


def square_mask(ky, kcb, kcr):
    _check_counts((ky, kcb, kcr))
    return SelectionMask(_square(ky), _square(kcb), _square(kcr))


def triangle_mask(ky, kcb, kcr):
    _check_counts((ky, kcb, kcr))
    return SelectionMask(ZIGZAG[:ky], ZIGZAG[:kcb], ZIGZAG[:kcr])


NAMED_SPLITS = {24: (14, 5, 5), 48: (32, 8, 8), 64: (44, 10, 10)}


def named_mask(name):
    """``DCT-<n><S|T>`` for n in 24, 48, 64 (square or triangle pattern)."""
    shapes = {"S": square_mask, "T": triangle_mask}
    try:
        prefix, rest = name.upper().split("-")
        n, shape = int(rest[:-1]), rest[-1]
        if prefix != "DCT":
            raise ValueError
        return shapes[shape](*NAMED_SPLITS[n])
    except (ValueError, KeyError, IndexError):
        raise ConfigError(f"unknown mask name {name!r}") from None


def list_mask(text):
    """Parse the ``FDMASK 1`` text format."""
    parts = {tag: [] for tag in COMPONENTS}
    seen = set()
    header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if not header:
            if fields != ["FDMASK", "1"]:
                raise ParseError("expected header 'FDMASK 1'", lineno)
            header = True
            continue
        if len(fields) != 2:
            raise ParseError("expected '<Y|CB|CR> <index>'", lineno)
        tag = fields[0].upper()
        if tag not in parts:
            raise ParseError(f"unknown component {fields[0]!r}", lineno)
        try:
            idx = int(fields[1])
        except ValueError:
            raise ParseError(f"bad index {fields[1]!r}", lineno) from None
        if not 0 <= idx <= 63:
            raise ParseError(f"index {idx} outside 0..63", lineno)
        if (tag, idx) in seen:
            raise ParseError(f"duplicate entry {tag} {idx}", lineno)
        seen.add((tag, idx))
        parts[tag].append(idx)
    if not header:
        raise ParseError("missing header", 1)
    return SelectionMask(parts["Y"], parts["CB"], parts["CR"])


def resolve_mask(spec):
    """A mask name (``DCT-24S``), ``all``, or a path to a mask file."""
    if spec is None or spec == "all":
        return SelectionMask.all_pass()
    if spec.upper().startswith("DCT-"):
        return named_mask(spec)
    return list_mask(Path(spec).read_text())


def top_k_mask(frequencies, k):
    """Mask of the ``k`` channels with the highest selection frequency (ties by index)."""
    f = np.asarray(frequencies).reshape(192)
    order = sorted(range(192), key=lambda i: (-f[i], i))
    return SelectionMask.from_flat(order[:k])


# heat maps -----------------------------------------------------------------------

@dataclass
class HeatMap:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((3, 8, 8), dtype=np.int64))
    samples: int = 0

    @property
    def frequencies(self):
        return self.counts / self.samples

    def flat(self):
        return self.frequencies.reshape(192)

    def merge(self, other):
        return HeatMap(self.counts + other.counts, self.samples + other.samples)

    def to_csv(self):
        f = self.frequencies
        rows = ["component,u,v,frequency"]
        for k, tag in enumerate(COMPONENTS):
            for u in range(8):
                for v in range(8):
                    rows.append(f"{tag},{u},{v},{float(f[k, u, v])!r}")
        return "\n".join(rows) + "\n"

    def to_pgm(self, component):
        gray = np.floor(255.0 * (1.0 - self.frequencies[component]) + 0.5).astype(np.uint8)
        return b"P5\n8 8\n255\n" + gray.tobytes()


def heatmap_aggregate(decisions):
    d = np.asarray(decisions)
    if d.ndim != 2 or d.shape[0] == 0:
        raise InsufficientDataError("need at least one decision vector")
    if d.shape[1] != 192:
        raise ConfigError("decision vectors must have 192 entries")
    counts = (d != 0).sum(axis=0).astype(np.int64).reshape(3, 8, 8)
    return HeatMap(counts, d.shape[0])


def heatmap_emit(hm, prefix):
    """Write ``<prefix>.csv`` and ``<prefix>_<Y|CB|CR>.pgm``; return the paths."""
    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".csv")
    csv_path.write_text(hm.to_csv())
    paths = [csv_path]
    for k, tag in enumerate(COMPONENTS):
        p = prefix.with_name(f"{prefix.name}_{tag}.pgm")
        p.write_bytes(hm.to_pgm(k))
        paths.append(p)
    return paths


def parse_heatmap_csv(text):
    lines = text.strip().splitlines()
    if lines[0] != "component,u,v,frequency":
        raise ParseError("bad CSV header", 1)
    freq = np.zeros((3, 8, 8))
    for lineno, ln in enumerate(lines[1:], start=2):
        tag, u, v, f = ln.split(",")
        freq[COMPONENTS.index(tag), int(u), int(v)] = float(f)
    return freq

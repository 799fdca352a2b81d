"""Checkpoint directories: one FDT1 tensor file per parameter plus a text manifest.

Layout::

    <dir>/manifest.txt     FDCKPT 1 header, SPEC/CONFIG lines, one PARAM line per tensor
    <dir>/<name>.fdt       parameter tensors (32-bit on disk)
    <dir>/metrics.csv      per-epoch training log
    <dir>/stats.txt        channel statistics used to standardize inputs (freq models)
    <dir>/mask.txt         static channel selection (freq models)
"""

from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import codec, dataio
from .errors import FormatError, ParseError
from .models import ModelSpec, build_model, metrics_csv
from .select import list_mask

HEADER = "FDCKPT 1"


def param_role(name):
    if name.startswith("gate."):
        return "gate"
    return "bias" if name.endswith(".b") else "weight"


def _spec_line(spec):
    return "SPEC " + " ".join(f"{k}={v}" for k, v in asdict(spec).items())


def _parse_spec(line, lineno):
    kinds = {f.name: f.type for f in fields(ModelSpec)}
    kw = {}
    for item in line.split()[1:]:
        key, _, value = item.partition("=")
        if key not in kinds:
            raise ParseError(f"unknown spec field {key!r}", line=lineno)
        if key == "kind":
            kw[key] = value
        elif key == "gated":
            kw[key] = value == "True"
        else:
            kw[key] = int(value)
    return ModelSpec(**kw)


def save_checkpoint(out_dir, model, metrics=None, stats=None, mask=None, config=None):
    """Write ``model`` into ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [HEADER, _spec_line(model.spec)]
    if config:
        lines.append("CONFIG " + " ".join(f"{k}={v}" for k, v in config.items()))
    for name in sorted(model.params):
        fname = f"{name}.fdt"
        (out / fname).write_bytes(dataio.tensor_write(model.params[name].data))
        lines.append(f"PARAM {name} {param_role(name)} {fname}")
    if metrics is not None:
        (out / "metrics.csv").write_text(metrics_csv(metrics))
    if stats is not None:
        (out / "stats.txt").write_text(stats.dumps())
    if mask is not None:
        (out / "mask.txt").write_text(mask.dumps())
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(ckpt_dir):
    """Return ``(model, stats, mask)``; stats and mask are None when absent."""
    root = Path(ckpt_dir)
    text = (root / "manifest.txt").read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise FormatError("not a checkpoint manifest")
    spec, state = None, {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "CONFIG":
            continue
        if parts[0] == "SPEC":
            spec = _parse_spec(line, lineno)
        elif parts[0] == "PARAM" and len(parts) == 4:
            state[parts[1]] = dataio.tensor_read((root / parts[3]).read_bytes())
        else:
            raise ParseError(f"bad manifest record {line!r}", line=lineno)
    if spec is None:
        raise ParseError("checkpoint manifest lacks a SPEC line", line=1)
    model = build_model(spec)
    missing = set(model.params) - set(state)
    if missing:
        raise FormatError(f"checkpoint lacks parameters {sorted(missing)}")
    model.load_state(state)
    stats = mask = None
    if (root / "stats.txt").exists():
        stats = codec.ChannelStats.loads((root / "stats.txt").read_text())
    if (root / "mask.txt").exists():
        mask = list_mask((root / "mask.txt").read_text())
    return model, stats, mask


def round_to_disk(model):
    """Snap parameters to their 32-bit on-disk values so a reload reproduces them exactly."""
    for p in model.params.values():
        p.data = p.data.astype(np.float32).astype(np.float64)

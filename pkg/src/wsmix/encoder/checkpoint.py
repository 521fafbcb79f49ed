"""Checkpoint archive: a JSON header plus one raw little-endian float64 blob per parameter.

Layout (a zip file, stored uncompressed):
    header.json          encoder config, replacement plan, seeds, parameter shapes
    params/<name>        raw '<f8' bytes in row-major order
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import asdict

import numpy as np

from .model import AsrModel, EncoderConfig, EncoderStack, ReplacementPlan, apply_replacement

FORMAT = "wsmix-checkpoint/1"


def _entry(name: str) -> zipfile.ZipInfo:
    # fixed timestamp so identical models give identical archives
    return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))


def save_checkpoint(path, model: AsrModel, seeds: dict | None = None, extra: dict | None = None) -> None:
    params = dict(model.named_parameters())
    header = {
        "format": FORMAT,
        "encoder": asdict(model.stack.cfg),
        "plan": model.plan.to_dict(),
        "seeds": seeds or {},
        "extra": extra or {},
        "params": {name: list(p.shape) for name, p in params.items()},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(_entry("header.json"), json.dumps(header, indent=2, sort_keys=True))
        for name, p in params.items():
            zf.writestr(_entry(f"params/{name}"), np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[AsrModel, dict]:
    """Rebuild the model skeleton from the header, then overwrite every parameter."""
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != FORMAT:
            raise ValueError(f"{path}: unknown checkpoint format {header.get('format')!r}")
        cfg = EncoderConfig(**header["encoder"])
        plan = ReplacementPlan.from_dict(header["plan"])
        stack = EncoderStack(cfg, np.random.default_rng(0))
        stack.set_trainable(False)
        model = AsrModel(apply_replacement(stack, plan))
        params = dict(model.named_parameters())
        if set(params) != set(header["params"]):
            raise ValueError(f"{path}: parameter set does not match the recorded architecture")
        for name, p in params.items():
            shape = tuple(header["params"][name])
            raw = np.frombuffer(zf.read(f"params/{name}"), dtype="<f8").reshape(shape)
            p.data[...] = raw
    model.eval()
    return model, header

"""Synthetic character-sequence corpus and its binary snapshot format.

Each character id owns a prototype feature vector; a sample renders its
label string as runs of noisy copies of those prototypes. Neighbouring
characters always differ, so run boundaries stay visible in the features.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

BLANK = 0
_MAGIC = b"WSMDS1\n"


@dataclass(frozen=True)
class DatasetSpec:
    n: int = 512
    label_len: tuple[int, int] = (3, 12)
    frames_per_label: tuple[int, int] = (2, 5)
    noise: float = 0.3
    d_in: int = 32
    n_chars: int = 28
    prototype_seed: int = 1234

    @property
    def vocab_size(self) -> int:
        return self.n_chars + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        d["label_len"] = tuple(d["label_len"])
        d["frames_per_label"] = tuple(d["frames_per_label"])
        return cls(**d)


@dataclass
class LabeledSequence:
    features: np.ndarray  # (T, d_in)
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.labels) < 1:
            raise ValueError("a sample needs at least one label")
        if BLANK in self.labels:
            raise ValueError("labels must not contain the blank id")

    @property
    def valid_length(self) -> int:
        return self.features.shape[0]


def prototypes(spec: DatasetSpec) -> np.ndarray:
    """(vocab_size, d_in) prototype matrix; row 0 (blank) is unused."""
    rng = np.random.default_rng(spec.prototype_seed)
    return rng.normal(size=(spec.vocab_size, spec.d_in))


def make_synthetic_dataset(spec: DatasetSpec, seed: int) -> list[LabeledSequence]:
    protos = prototypes(spec)
    rng = np.random.default_rng(seed)
    lo, hi = spec.label_len
    flo, fhi = spec.frames_per_label
    out = []
    for _ in range(spec.n):
        n_labels = int(rng.integers(lo, hi + 1))
        labels = [int(rng.integers(1, spec.n_chars + 1))]
        while len(labels) < n_labels:
            # draw from the other n_chars - 1 ids so neighbours differ
            c = int(rng.integers(1, spec.n_chars))
            labels.append(c if c < labels[-1] else c + 1)
        runs = rng.integers(flo, fhi + 1, size=n_labels)
        ids = np.repeat(labels, runs)
        feats = protos[ids] + spec.noise * rng.normal(size=(ids.size, spec.d_in))
        out.append(LabeledSequence(feats, tuple(labels)))
    return out


def split_dataset(samples: list[LabeledSequence], held_out: int) -> tuple[list, list]:
    """Last ``held_out`` samples form the evaluation split."""
    if not 0 < held_out < len(samples):
        raise ValueError(f"held_out must lie in (0, {len(samples)})")
    return samples[:-held_out], samples[-held_out:]


def nearest_prototype_decode(sample: LabeledSequence, spec: DatasetSpec) -> list[int]:
    """Frame-wise nearest prototype with runs collapsed."""
    protos = prototypes(spec)[1:]
    d2 = ((sample.features[:, None, :] - protos[None]) ** 2).sum(-1)
    ids = d2.argmin(axis=1) + 1
    keep = np.r_[True, ids[1:] != ids[:-1]]
    return ids[keep].tolist()


def write_snapshot(path, samples: list[LabeledSequence], spec: DatasetSpec, seed: int) -> None:
    """Header (JSON spec + seed) then per-sample shape-prefixed little-endian records."""
    header = json.dumps({"spec": spec.to_dict(), "seed": seed, "count": len(samples)}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header.encode())
        for s in samples:
            T, d = s.features.shape
            fh.write(struct.pack("<II", T, d))
            fh.write(s.features.astype("<f8").tobytes())
            fh.write(struct.pack("<I", len(s.labels)))
            fh.write(np.asarray(s.labels, dtype="<u4").tobytes())


def read_snapshot(path) -> tuple[DatasetSpec, int, list[LabeledSequence]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(_MAGIC):
        raise ValueError(f"{path} is not a dataset snapshot")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    header = json.loads(raw[pos : pos + hlen])
    pos += hlen
    samples = []
    for _ in range(header["count"]):
        T, d = struct.unpack_from("<II", raw, pos)
        pos += 8
        feats = np.frombuffer(raw, dtype="<f8", count=T * d, offset=pos).reshape(T, d).astype(np.float64)
        pos += 8 * T * d
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        labels = tuple(int(x) for x in np.frombuffer(raw, dtype="<u4", count=n, offset=pos))
        pos += 4 * n
        samples.append(LabeledSequence(feats, labels))
    return DatasetSpec.from_dict(header["spec"]), header["seed"], samples

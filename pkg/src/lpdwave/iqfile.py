"""IQF32 frame files and their CSV sidecar manifests.

IQF32 layout: 16-byte little-endian header (magic "IQF1", u32 frame_length,
u32 frame_count, u32 reserved) followed by frame_count frames of
interleaved float32 (I, Q) pairs. The manifest is a CSV with columns
index,class,snr_db,seed describing each frame in file order.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

MAGIC = b"IQF1"
_HEADER = struct.Struct("<4sIII")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    index: int
    label: str
    snr_db: float
    seed: int


@dataclass
class DatasetManifest:
    """Frame-level metadata for one IQF32 file."""

    entries: list[ManifestEntry]
    frame_length: int
    version: str = "corpus-v1-surrogate"

    def __post_init__(self):
        for prev, cur in zip(self.entries, self.entries[1:]):
            if cur.index <= prev.index:
                raise FormatError("manifest indices must be strictly increasing")

    def counts_by_label(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.label] = out.get(e.label, 0) + 1
        return out


def write_frames(path: Path | str, frames: np.ndarray) -> None:
    """Write [count, n] complex frames as IQF32."""
    frames = np.atleast_2d(np.asarray(frames))
    count, n = frames.shape
    inter = np.empty((count, 2 * n), dtype="<f4")
    inter[:, 0::2] = frames.real
    inter[:, 1::2] = frames.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, count, 0))
        fh.write(inter.tobytes())


def read_frames(path: Path | str) -> np.ndarray:
    """Read an IQF32 file back to a [count, n] complex64 array."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError("truncated IQF32 header")
        magic, n, count, _ = _HEADER.unpack(header)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        raw = np.frombuffer(fh.read(), dtype="<f4")
    if raw.size != 2 * n * count:
        raise FormatError("IQF32 payload size does not match header")
    inter = raw.reshape(count, 2 * n)
    return (inter[:, 0::2] + 1j * inter[:, 1::2]).astype(np.complex64)


def write_manifest(path: Path | str, manifest: DatasetManifest) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "class", "snr_db", "seed"])
        for e in manifest.entries:
            writer.writerow([e.index, e.label, f"{e.snr_db:.9g}", e.seed])


def read_manifest(path: Path | str, frame_length: int = 0,
                  version: str = "corpus-v1-surrogate") -> DatasetManifest:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["index", "class", "snr_db", "seed"]:
            raise FormatError(f"unexpected manifest header {header}")
        for row in reader:
            entries.append(
                ManifestEntry(int(row[0]), row[1], float(row[2]), int(row[3]))
            )
    return DatasetManifest(entries, frame_length, version)


def write_dataset(
    stem: Path | str,
    frames: np.ndarray,
    entries: Iterable[ManifestEntry],
    version: str = "corpus-v1-surrogate",
) -> tuple[Path, Path]:
    """Write <stem>.iqf32 plus <stem>.csv and return both paths."""
    stem = Path(stem)
    frames = np.atleast_2d(np.asarray(frames))
    data_path = stem.with_suffix(".iqf32")
    manifest_path = stem.with_suffix(".csv")
    write_frames(data_path, frames)
    write_manifest(
        manifest_path,
        DatasetManifest(list(entries), frames.shape[1], version),
    )
    return data_path, manifest_path


def read_dataset(stem: Path | str) -> tuple[np.ndarray, DatasetManifest]:
    stem = Path(stem)
    frames = read_frames(stem.with_suffix(".iqf32"))
    manifest = read_manifest(stem.with_suffix(".csv"), frames.shape[1])
    if len(manifest.entries) != frames.shape[0]:
        raise FormatError("manifest entry count does not match frame count")
    return frames, manifest

"""Volume containers, loading and the two intensity preprocessing pipelines."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import cv2
import numpy as np

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")
OUTPUT_RANGE = (0, 255)


class VolumeError(Exception):
    """Raised when a volume container cannot be read."""


class UnsupportedFormatError(VolumeError):
    pass


@dataclass(frozen=True)
class Volume:
    """A 3D intensity grid plus the convention of its ordering axis.

    ``axis_direction`` is +1 when increasing index along ``ordering_axis``
    walks in the common (co-directed) orientation shared by every volume of
    a dataset, -1 when the stored order is reversed.
    """

    data: np.ndarray
    ordering_axis: int = 0
    axis_direction: int = 1
    volume_id: str = ""
    bit_depth: str = ""

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"volume data must be 3D with non-empty axes, got shape {self.data.shape}")
        if self.ordering_axis not in (0, 1, 2):
            raise ValueError(f"ordering_axis must be 0, 1 or 2, got {self.ordering_axis}")
        if self.axis_direction not in (1, -1):
            raise ValueError(f"axis_direction must be +1 or -1, got {self.axis_direction}")
        if not self.bit_depth:
            object.__setattr__(self, "bit_depth", str(self.data.dtype))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_slices(self) -> int:
        return self.data.shape[self.ordering_axis]

    def slice(self, index: int) -> np.ndarray:
        """2D slice perpendicular to the ordering axis."""
        return np.take(self.data, index, axis=self.ordering_axis)

    def slices(self, indices) -> np.ndarray:
        """Stack of slices with the slice index moved to the front."""
        return np.moveaxis(np.take(self.data, np.asarray(indices), axis=self.ordering_axis),
                           self.ordering_axis, 0)

    def with_data(self, data: np.ndarray, **changes) -> "Volume":
        return replace(self, data=data, bit_depth=changes.pop("bit_depth", str(data.dtype)), **changes)


@dataclass(frozen=True)
class PreprocessSpec:
    kind: str
    window: tuple[float, float]
    downsample_factor: int = 1
    output_range: tuple[int, int] = field(default=OUTPUT_RANGE)

    def __post_init__(self):
        if self.kind not in ("hounsfield_window", "percentile_window"):
            raise ValueError(f"unknown preprocessing kind {self.kind!r}")
        low, high = self.window
        if not low < high:
            raise ValueError(f"window low must be < high, got {self.window}")
        if self.kind == "percentile_window" and not (0 <= low and high <= 100):
            raise ValueError(f"percentile window must lie in [0, 100], got {self.window}")
        if int(self.downsample_factor) < 1:
            raise ValueError("downsample_factor must be >= 1")
        if tuple(self.output_range) != OUTPUT_RANGE:
            raise ValueError("output_range is fixed to (0, 255)")


# Chest CT: HU window, no resampling.
MOSMED = PreprocessSpec("hounsfield_window", (-900.0, 500.0))
# Synchrotron fish scans: 2x block downsampling, per-volume percentile window.
MEDAKA = PreprocessSpec("percentile_window", (1.0, 99.95), downsample_factor=2)


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------

def load_volume(path: str | os.PathLike, meta: Mapping[str, Any] | None = None) -> Volume:
    """Read a slice-stack directory or a raw array file with a JSON sidecar.

    For a directory, 2D images are sorted lexicographically by file name and
    stacked along ``meta["ordering_axis"]`` (default 0). For a raw file the
    sidecar (``<stem>.json``) supplies ``dims``, ``dtype``, ``ordering_axis``
    and ``axis_direction``; ``meta`` entries override the sidecar.
    No intensity transformation is applied.
    """
    path = Path(path)
    meta = dict(meta or {})
    if path.is_dir():
        return _load_stack(path, meta)
    if path.suffix == ".json":
        path = _raw_path_for(path)
    if not path.exists():
        raise VolumeError(f"no such volume: {path}")
    return _load_raw(path, meta)


def _load_stack(directory: Path, meta: dict) -> Volume:
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise VolumeError(f"no PNG/TIFF slices found in {directory}")
    slices = []
    for f in files:
        img = cv2.imread(str(f), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise UnsupportedFormatError(f"cannot decode image {f}")
        if img.ndim != 2:
            raise UnsupportedFormatError(f"{f}: expected a grayscale image, got shape {img.shape}")
        if slices and img.shape != slices[0].shape:
            raise VolumeError(f"{f}: slice shape {img.shape} differs from {slices[0].shape} of {files[0].name}")
        if slices and img.dtype != slices[0].dtype:
            raise VolumeError(f"{f}: dtype {img.dtype} differs from {slices[0].dtype}")
        slices.append(img)
    axis = int(meta.get("ordering_axis", 0))
    data = np.stack(slices, axis=axis)
    return Volume(data, ordering_axis=axis,
                  axis_direction=int(meta.get("axis_direction", 1)),
                  volume_id=str(meta.get("volume_id", directory.name)),
                  bit_depth=str(data.dtype))


def _raw_path_for(sidecar: Path) -> Path:
    header = json.loads(sidecar.read_text())
    return sidecar.with_name(header.get("file", sidecar.stem + ".raw"))


def _load_raw(path: Path, meta: dict) -> Volume:
    sidecar = path.with_suffix(".json")
    if not sidecar.exists():
        raise VolumeError(f"missing sidecar header {sidecar}")
    header = json.loads(sidecar.read_text())
    header.update(meta)
    try:
        dims = tuple(int(d) for d in header["dims"])
        dtype = np.dtype(header["dtype"]).newbyteorder("<")
    except KeyError as exc:
        raise VolumeError(f"{sidecar}: missing key {exc}") from None
    except TypeError as exc:
        raise UnsupportedFormatError(f"{sidecar}: unsupported dtype {header.get('dtype')!r}") from exc
    if dtype.kind not in "uif":
        raise UnsupportedFormatError(f"{sidecar}: unsupported dtype {header['dtype']!r}")
    if len(dims) != 3:
        raise VolumeError(f"{sidecar}: dims must have 3 entries, got {dims}")
    raw = np.fromfile(path, dtype=dtype)
    if raw.size != int(np.prod(dims)):
        raise VolumeError(f"{path}: expected {int(np.prod(dims))} values for dims {dims}, found {raw.size}")
    data = raw.reshape(dims).astype(dtype.newbyteorder("="))
    return Volume(data, ordering_axis=int(header.get("ordering_axis", 0)),
                  axis_direction=int(header.get("axis_direction", 1)),
                  volume_id=str(header.get("volume_id", path.stem)),
                  bit_depth=str(header.get("bit_depth", data.dtype)))


def save_volume(v: Volume, path: str | os.PathLike) -> Path:
    """Write ``v`` as ``<path>.raw`` (little-endian) plus ``<path>.json``."""
    path = Path(path).with_suffix(".raw")
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(v.data)
    data.astype(data.dtype.newbyteorder("<")).tofile(path)
    header = {
        "file": path.name,
        "dims": list(data.shape),
        "dtype": data.dtype.name,
        "ordering_axis": v.ordering_axis,
        "axis_direction": v.axis_direction,
        "volume_id": v.volume_id,
        "bit_depth": v.bit_depth,
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# Intensity preprocessing
# --------------------------------------------------------------------------

def window_to_uint8(x: np.ndarray, low: float, high: float) -> np.ndarray:
    """Clip to ``[low, high]``, map linearly onto [0, 255], round half to even."""
    x = np.asarray(x, dtype=np.float64)
    if not high > low:
        return np.zeros(x.shape, dtype=np.uint8)
    scaled = (np.clip(x, low, high) - low) * (255.0 / (high - low))
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def preprocess_hounsfield(v: Volume, spec: PreprocessSpec = MOSMED) -> Volume:
    if spec.kind != "hounsfield_window":
        raise ValueError(f"expected a hounsfield_window spec, got {spec.kind}")
    low, high = spec.window
    return v.with_data(window_to_uint8(v.data, low, high), bit_depth="uint8")


def preprocess_percentile(v: Volume, spec: PreprocessSpec = MEDAKA) -> Volume:
    """Percentile window computed over this one volume only.

    Percentiles use linear interpolation between order statistics. A volume
    whose two percentiles coincide maps to all zeros.
    """
    if spec.kind != "percentile_window":
        raise ValueError(f"expected a percentile_window spec, got {spec.kind}")
    low, high = np.percentile(v.data, spec.window, method="linear")
    return v.with_data(window_to_uint8(v.data, low, high), bit_depth="uint8")


def downsample(v: Volume, factor: int) -> Volume:
    """Block-mean downsampling by ``factor`` along every axis.

    Trailing voxels that do not fill a whole block are dropped, so each axis
    becomes ``len // factor``. The result is float64 (no rounding).
    """
    factor = int(factor)
    if factor <= 0:
        raise ValueError(f"downsample factor must be positive, got {factor}")
    if factor == 1:
        return v
    if min(v.shape) < factor:
        raise ValueError(f"every axis must be >= factor {factor}, got shape {v.shape}")
    n0, n1, n2 = (s // factor for s in v.shape)
    block = v.data[: n0 * factor, : n1 * factor, : n2 * factor].astype(np.float64)
    block = block.reshape(n0, factor, n1, factor, n2, factor)
    return v.with_data(block.mean(axis=(1, 3, 5)))


def preprocess(v: Volume, spec: PreprocessSpec) -> Volume:
    """Full pipeline: optional downsampling, then the intensity window."""
    if spec.downsample_factor > 1:
        v = downsample(v, spec.downsample_factor)
    if spec.kind == "hounsfield_window":
        return preprocess_hounsfield(v, spec)
    return preprocess_percentile(v, spec)

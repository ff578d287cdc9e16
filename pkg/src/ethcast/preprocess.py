"""Reflectivity to rain-rate conversion and morphological clutter removal."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, DataError
from .gridio import GridFrame, Variable


@dataclass(frozen=True)
class ZRParams:
    """Power-law Z = a * R**b; the defaults are Marshall-Palmer."""

    a: float = 200.0
    b: float = 1.6

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ArgumentError(f"Z-R parameters must be positive, got a={self.a}, b={self.b}")


@dataclass(frozen=True)
class ClutterParams:
    rain_threshold_mmh: float = 0.1
    erosion_iters: int = 3
    dilation_iters: int = 3
    element: str = "square"  # or "cross"

    def __post_init__(self):
        if not self.rain_threshold_mmh > 0:
            raise ArgumentError("rain_threshold_mmh must be positive")
        if self.erosion_iters < 0 or self.dilation_iters < 0:
            raise ArgumentError("iteration counts must be >= 0")
        if self.element not in ("square", "cross"):
            raise ArgumentError(f"structuring element must be 'square' or 'cross', got {self.element!r}")

    def structure(self):
        if self.element == "square":
            return np.ones((3, 3), dtype=bool)
        return ndimage.generate_binary_structure(2, 1)


def dbz_to_rain_values(dbz, params=ZRParams()):
    """R = (10**(dBZ/10) / a) ** (1/b), in float64."""
    dbz = np.asarray(dbz, dtype=np.float64)
    return (10.0 ** (dbz / 10.0) / params.a) ** (1.0 / params.b)


def rain_to_dbz_values(rain, params=ZRParams()):
    """dBZ = 10 log10(a R**b) for R > 0, in float64 (R = 0 gives -inf)."""
    rain = np.asarray(rain, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(params.a) + 10.0 * params.b * np.log10(rain)


def dbz_to_rain(frame, params=ZRParams()):
    if frame.variable != Variable.REFLECTIVITY_DBZ:
        raise ArgumentError(f"dbz_to_rain needs a reflectivity frame, got {frame.variable.name}")
    valid = frame.valid
    rain = np.zeros(frame.shape, dtype=np.float64)
    rain[valid] = dbz_to_rain_values(frame.values[valid], params)
    return frame.with_values(rain.astype(np.float32), Variable.RAIN_MMH)


def rain_to_dbz(frame, params=ZRParams()):
    """Convert rain rate to reflectivity; zero rain becomes nodata."""
    if frame.variable != Variable.RAIN_MMH:
        raise ArgumentError(f"rain_to_dbz needs a rain frame, got {frame.variable.name}")
    v = frame.values
    valid = frame.valid
    if np.any(valid & (v < 0)):
        i = int(np.flatnonzero(valid & (v < 0))[0])
        raise DataError(f"negative rain rate at index {i}")
    wet = valid & (v > 0)
    out = np.full(frame.shape, frame.nodata, dtype=np.float64)
    out[wet] = rain_to_dbz_values(v[wet], params)
    return frame.with_values(out.astype(np.float32), Variable.REFLECTIVITY_DBZ)


def _rain_array(frame_or_array):
    if isinstance(frame_or_array, GridFrame):
        if frame_or_array.variable != Variable.RAIN_MMH:
            raise ArgumentError(f"expected a rain frame, got {frame_or_array.variable.name}")
        return frame_or_array.values, frame_or_array.valid
    a = np.asarray(frame_or_array)
    if a.ndim != 2:
        raise ArgumentError(f"expected a 2D field, got shape {a.shape}")
    return a, np.ones(a.shape, dtype=bool)


def clutter_mask(frame, params=ClutterParams()):
    """Opening of the wet-pixel mask: erosion then dilation, outside grid = 0."""
    values, valid = _rain_array(frame)
    wet = valid & (values > params.rain_threshold_mmh)
    st = params.structure()
    mask = wet
    if params.erosion_iters:
        mask = ndimage.binary_erosion(mask, st, iterations=params.erosion_iters, border_value=0)
    if params.dilation_iters:
        mask = ndimage.binary_dilation(mask, st, iterations=params.dilation_iters, border_value=0)
    return mask


def apply_mask(frame, mask):
    """Zero every pixel outside ``mask``; nodata pixels are left as they are."""
    mask = np.asarray(mask, dtype=bool)
    values = frame.values if isinstance(frame, GridFrame) else np.asarray(frame)
    if mask.shape != values.shape:
        raise ArgumentError(f"mask shape {mask.shape} does not match field {values.shape}")
    keep = mask | ~frame.valid if isinstance(frame, GridFrame) else mask
    out = np.where(keep, values, np.zeros((), dtype=values.dtype))
    if isinstance(frame, GridFrame):
        return frame.with_values(out)
    return out


def remove_clutter(frame, params=ClutterParams()):
    return apply_mask(frame, clutter_mask(frame, params))

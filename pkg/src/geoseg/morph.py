"""Morphology kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; set ``GEOSEG_PURE_PYTHON=1``
to force the fallback.
"""

import os

import numpy as np

from . import _morph_py

if os.environ.get("GEOSEG_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _morph_ext as _ext
    except ImportError:
        _ext = None

BACKEND = "cython" if _ext is not None else "python"
_impl = _ext if _ext is not None else _morph_py


def backends() -> dict:
    """Available kernel implementations keyed by name."""
    out = {"python": _morph_py}
    if _ext is not None:
        out["cython"] = _ext
    return out


def line_offsets(length: int, angle_deg: float) -> np.ndarray:
    """(dy, dx) offsets of a centred digital line segment of ``length`` pixels.

    Row axis points down, so 45 degrees runs towards the upper right.
    """
    if length < 1:
        raise ValueError("line length must be >= 1")
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    # chebyshev step keeps diagonal segments length pixels long
    step = 1.0 / max(abs(c), abs(s))
    pts = []
    for t in range(length):
        k = (t - (length - 1) // 2) * step
        p = (int(np.round(-k * s + 0.0)), int(np.round(k * c + 0.0)))
        if p not in pts:
            pts.append(p)
    return np.ascontiguousarray(pts, dtype=np.int_)


def erode_line(img, length: int, angle_deg: float, backend=None) -> np.ndarray:
    impl = backends()[backend] if backend else _impl
    return impl.erode_offsets(np.ascontiguousarray(img, dtype=np.float64), line_offsets(length, angle_deg))


def dilate_line(img, length: int, angle_deg: float, backend=None) -> np.ndarray:
    impl = backends()[backend] if backend else _impl
    return impl.dilate_offsets(np.ascontiguousarray(img, dtype=np.float64), line_offsets(length, angle_deg))


def reconstruct_by_dilation(marker, mask, backend=None) -> np.ndarray:
    impl = backends()[backend] if backend else _impl
    return impl.reconstruct_by_dilation(np.ascontiguousarray(marker, dtype=np.float64),
                                        np.ascontiguousarray(mask, dtype=np.float64))


def opening_by_reconstruction(img, length: int, angle_deg: float, backend=None) -> np.ndarray:
    """Erode with a line segment, then reconstruct under the original image."""
    return reconstruct_by_dilation(erode_line(img, length, angle_deg, backend), img, backend)

"""Global-to-camera surface normals for cylindrical panoramas.

Each panorama column gets a rotation about the vertical axis, proportional
to its signed circular offset from a canonical column whose normal faces
the camera.  Conventions: the camera-facing local normal is ``(0, 1, 0)``,
positive angles rotate counterclockwise in the (x, y) plane, and ``z`` is
vertical.  All-zero vectors mark void pixels and pass through untouched.
"""

from __future__ import annotations

import numpy as np

NORM_TOL = 1e-6


def column_offset(x, x0: int, width: int):
    """Signed offset ``x - x0`` wrapped into ``[-W/2, W/2)``."""
    if width <= 0:
        raise ValueError(f"panorama width must be positive, got {width}")
    half = width // 2
    return (np.asarray(x) - x0 + half) % width - half


def rotation_for_column(x, x0: int, width: int):
    """Rotation angle in radians for column(s) ``x``."""
    return 2.0 * np.pi * column_offset(x, x0, width) / width


def rotation_matrix(theta: float) -> np.ndarray:
    """3x3 rotation about the vertical axis."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _void(normals: np.ndarray) -> np.ndarray:
    return np.all(normals == 0.0, axis=0)


def validate_normals(normals: np.ndarray) -> np.ndarray:
    n = np.asarray(normals, dtype=np.float64)
    if n.ndim != 3 or n.shape[0] != 3:
        raise ValueError(f"normal map must be 3xHxW, got {n.shape}")
    norms = np.sqrt((n * n).sum(axis=0))
    bad = ~_void(n) & (np.abs(norms - 1.0) > NORM_TOL)
    if np.any(bad):
        raise ValueError(f"{int(bad.sum())} non-void normals are not unit length")
    return n


def rotate_columns(normals: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rotate the horizontal components of every column by its own angle."""
    n = np.asarray(normals, dtype=np.float64)
    c, s = np.cos(angles), np.sin(angles)
    out = n.copy()
    out[0] = c * n[0] - s * n[1]
    out[1] = s * n[0] + c * n[1]
    return out


def globals_to_locals(normals: np.ndarray, x0: int) -> np.ndarray:
    n = validate_normals(normals)
    width = n.shape[2]
    if not 0 <= x0 < width:
        raise ValueError(f"canonical column {x0} outside [0, {width})")
    return rotate_columns(n, rotation_for_column(np.arange(width), x0, width))


def locals_to_globals(normals: np.ndarray, x0: int) -> np.ndarray:
    n = np.asarray(normals, dtype=np.float64)
    width = n.shape[2]
    return rotate_columns(n, -rotation_for_column(np.arange(width), x0, width))


def compare_canonical_choices(normals: np.ndarray, x0a: int, x0b: int) -> float:
    """Largest angle in degrees between the maps produced by two canonical columns."""
    a = globals_to_locals(normals, x0a)
    b = globals_to_locals(normals, x0b)
    keep = ~_void(np.asarray(normals))
    if not keep.any():
        return 0.0
    # atan2 of sine and cosine stays accurate for tiny angles, unlike arccos
    sin = np.linalg.norm(np.cross(a, b, axis=0), axis=0)
    cos = (a * b).sum(axis=0)
    return float(np.degrees(np.arctan2(sin, cos))[keep].max())


def false_color(normals: np.ndarray) -> np.ndarray:
    """H x W x 3 uint8 image with channel value ``round(127.5 * (n + 1))``."""
    n = np.asarray(normals, dtype=np.float64)
    return np.clip(np.rint(127.5 * (n + 1.0)), 0, 255).astype(np.uint8).transpose(1, 2, 0)

"""Binary PGM (P5) rendering of normalized fields."""

from pathlib import Path

import numpy as np

from hailcast.core.errors import RenderError

MAXVAL = 255


def encode_pgm(field: np.ndarray) -> bytes:
    """P5 bytes for a [H x W] field in [0, 1]; v -> round(255 v)."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise RenderError("PGM rendering needs a 2-D field", shape=list(field.shape))
    if not np.all(np.isfinite(field)) or field.min() < 0.0 or field.max() > 1.0:
        raise RenderError(
            "field values must lie in [0, 1]",
            minimum=float(np.nanmin(field)) if field.size else None,
            maximum=float(np.nanmax(field)) if field.size else None,
        )
    height, width = field.shape
    header = f"P5\n{width} {height}\n{MAXVAL}\n".encode("ascii")
    payload = np.rint(field * MAXVAL).astype(np.uint8)
    return header + payload.tobytes()


def render_pgm(field: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(field))
    return path


def render_strip(frames: np.ndarray, path: str | Path) -> Path:
    """Lay [K x H x W] frames side by side and render them as one image."""
    frames = np.asarray(frames)
    if frames.ndim != 3 or frames.shape[0] < 1:
        raise RenderError("strip rendering needs [K x H x W] frames", shape=list(frames.shape))
    return render_pgm(np.concatenate(list(frames), axis=1), path)

import numpy as np
import pytest

from aukit.domain import AU_NAMES, INTENSITY_AU_NAMES
from aukit.ingest import FrameAURecord


def openface_csv(rows, include=None, exclude=()):
    """Build a minimal OpenFace-style CSV string.

    rows: list of dicts with optional overrides per column.
    """
    columns = ["frame", "face_id", "timestamp", "confidence", "success"]
    columns += [f"{n}_r" for n in INTENSITY_AU_NAMES]
    columns += [f"{n}_c" for n in AU_NAMES]
    columns = [c for c in columns if c not in exclude]
    if include:
        columns += list(include)
    lines = [", ".join(columns)]
    for i, overrides in enumerate(rows, start=1):
        defaults = {
            "frame": str(i),
            "face_id": "0",
            "timestamp": f"{(i - 1) * 0.04:.2f}",
            "confidence": "0.98",
            "success": "1",
        }
        cells = []
        for c in columns:
            if c in overrides:
                cells.append(str(overrides[c]))
            elif c in defaults:
                cells.append(defaults[c])
            elif c.endswith("_r"):
                cells.append("1.0")
            else:
                cells.append("0.0")
        lines.append(", ".join(cells))
    return "\n".join(lines) + "\n"


def make_record(video_id="v0", frame_index=1, intensities=None, presences=None,
                confidence=0.98, success=True):
    if intensities is None:
        intensities = np.ones(17)
    if presences is None:
        presences = np.zeros(18, dtype=np.int64)
    return FrameAURecord(
        video_id=video_id,
        frame_index=frame_index,
        timestamp=0.04 * (frame_index - 1),
        confidence=confidence,
        success=success,
        intensities=np.asarray(intensities, dtype=np.float64),
        presences=np.asarray(presences, dtype=np.int64),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

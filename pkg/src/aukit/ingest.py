"""Parsing of OpenFace-style per-frame AU tracks and frame-level predictions.

OpenFace 2.2.0 writes one comma-separated file per video with a header row;
columns are addressed by name so column order never matters. Zero-valued
intensities are the tool's known failure mode and are repaired by within-video
linear interpolation.
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    AU_NAMES,
    ContractError,
    INTENSITY_AU_NAMES,
    NUM_AUS,
    NUM_EXPRESSIONS,
    NUM_INTENSITY_AUS,
    expression_index,
)

log = logging.getLogger(__name__)

FRAME_STORE_FORMAT = "aukit-frames"
FRAME_STORE_VERSION = 1

INTENSITY_COLUMNS = tuple(f"{n}_r" for n in INTENSITY_AU_NAMES)
PRESENCE_COLUMNS = tuple(f"{n}_c" for n in AU_NAMES)


@dataclass
class FrameAURecord:
    """One video frame's AU intensities (17) and presence flags (18)."""

    video_id: str
    frame_index: int
    timestamp: float
    confidence: float
    success: bool
    intensities: np.ndarray
    presences: np.ndarray
    interpolated_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        self.presences = np.asarray(self.presences, dtype=np.int64)
        if self.intensities.shape != (NUM_INTENSITY_AUS,):
            raise ContractError("intensities must be a 17-vector")
        if self.presences.shape != (NUM_AUS,):
            raise ContractError("presences must be an 18-vector")
        if self.interpolated_mask is None:
            self.interpolated_mask = np.zeros(NUM_INTENSITY_AUS, dtype=bool)
        else:
            self.interpolated_mask = np.asarray(self.interpolated_mask, dtype=bool)


@dataclass
class FramePrediction:
    """External per-frame expression scores plus the asserted label."""

    video_id: str
    frame_index: int
    scores: np.ndarray
    asserted_label: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (NUM_EXPRESSIONS,):
            raise ContractError("scores must be a 7-vector")


def _cell_float(row, column, row_number):
    raw = row.get(column)
    if raw is None or raw.strip() == "":
        raise ContractError(f"row {row_number}: empty cell in column {column!r}")
    try:
        return float(raw)
    except ValueError:
        raise ContractError(
            f"row {row_number}: non-numeric value {raw!r} in column {column!r}"
        ) from None


def parse_openface_csv(stream, video_id):
    """Parse one video's OpenFace output into FrameAURecords.

    Accepts a text or byte stream. Rows with success = 0 are retained but
    flagged; rows for secondary faces (face_id > 0) are dropped with a warning.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    elif hasattr(stream, "read") and isinstance(stream.read(0), bytes):
        stream = io.TextIOWrapper(stream, encoding="utf-8")

    reader = csv.DictReader(stream, skipinitialspace=True)
    if reader.fieldnames is None:
        raise ContractError("empty input: no header row")
    header = [h.strip() for h in reader.fieldnames]
    reader.fieldnames = header

    required = ["frame", "confidence", "success"]
    required += list(INTENSITY_COLUMNS) + list(PRESENCE_COLUMNS)
    missing = [c for c in required if c not in header]
    if missing:
        raise ContractError(f'missing column "{missing[0]}"')

    records = []
    for row_number, row in enumerate(reader, start=2):
        if "face_id" in header and _cell_float(row, "face_id", row_number) > 0:
            log.warning("%s row %d: dropping secondary face", video_id, row_number)
            continue
        intensities = np.empty(NUM_INTENSITY_AUS)
        for k, col in enumerate(INTENSITY_COLUMNS):
            v = _cell_float(row, col, row_number)
            if not 0.0 <= v <= 5.0:
                raise ContractError(
                    f"row {row_number}: intensity {col} = {v} outside [0, 5]"
                )
            intensities[k] = v
        presences = np.empty(NUM_AUS, dtype=np.int64)
        for k, col in enumerate(PRESENCE_COLUMNS):
            v = _cell_float(row, col, row_number)
            if v not in (0.0, 1.0):
                raise ContractError(
                    f"row {row_number}: presence {col} = {v} not in {{0, 1}}"
                )
            presences[k] = int(v)
        records.append(
            FrameAURecord(
                video_id=video_id,
                frame_index=int(_cell_float(row, "frame", row_number)),
                timestamp=_cell_float(row, "timestamp", row_number)
                if "timestamp" in header
                else 0.0,
                confidence=_cell_float(row, "confidence", row_number),
                success=_cell_float(row, "success", row_number) != 0.0,
                intensities=intensities,
                presences=presences,
            )
        )
    return records


def interpolate_zero_intensities(records):
    """Repair exactly-zero intensities by per-AU linear interpolation.

    Returns (repaired records, flags). Leading/trailing zeros take the nearest
    nonzero value; an all-zero AU series is left unchanged and flagged.
    Input must be one video sorted by frame_index.
    """
    if not records:
        return [], []
    video_ids = {r.video_id for r in records}
    if len(video_ids) > 1:
        raise ContractError(f"records span multiple videos: {sorted(video_ids)}")
    frames = [r.frame_index for r in records]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ContractError("records must be sorted by frame_index")

    video_id = records[0].video_id
    series = np.stack([r.intensities for r in records])  # n x 17
    mask = np.stack([r.interpolated_mask for r in records])
    positions = np.asarray(frames, dtype=np.float64)
    flags = []
    for j, name in enumerate(INTENSITY_AU_NAMES):
        col = series[:, j]
        zero = col == 0.0
        if not zero.any():
            continue
        if zero.all():
            flags.append(f"{video_id}: {name} all-zero")
            continue
        known = ~zero
        series[zero, j] = np.interp(
            positions[zero], positions[known], col[known]
        )
        mask[zero, j] = True

    repaired = [
        FrameAURecord(
            video_id=r.video_id,
            frame_index=r.frame_index,
            timestamp=r.timestamp,
            confidence=r.confidence,
            success=r.success,
            intensities=series[i],
            presences=r.presences.copy(),
            interpolated_mask=mask[i],
        )
        for i, r in enumerate(records)
    ]
    for flag in flags:
        log.warning(flag)
    return repaired, flags


def load_frame_predictions(stream):
    """Load per-frame expression predictions (video_id, frame, label, s0..s6)."""
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream, skipinitialspace=True)
    if reader.fieldnames is None:
        raise ContractError("empty input: no header row")
    score_cols = [f"s{j}" for j in range(NUM_EXPRESSIONS)]
    missing = [
        c for c in ["video_id", "frame", "label"] + score_cols
        if c not in reader.fieldnames
    ]
    if missing:
        raise ContractError(f'missing column "{missing[0]}"')

    predictions = []
    for row_number, row in enumerate(reader, start=2):
        scores = np.array([_cell_float(row, c, row_number) for c in score_cols])
        if np.any(scores < 0):
            raise ContractError(f"row {row_number}: negative score")
        total = scores.sum()
        if abs(total - 1.0) > 1e-3:
            raise ContractError(
                f"row {row_number}: scores sum to {total}, outside tolerance"
            )
        scores = scores / total
        predictions.append(
            FramePrediction(
                video_id=row["video_id"].strip(),
                frame_index=int(_cell_float(row, "frame", row_number)),
                scores=scores,
                asserted_label=expression_index(row["label"]),
            )
        )
    return predictions


def write_frame_store(records, path):
    """Serialize records as newline-delimited JSON with a versioned header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"format": FRAME_STORE_FORMAT, "version": FRAME_STORE_VERSION})
            + "\n"
        )
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "video_id": r.video_id,
                        "frame": r.frame_index,
                        "timestamp": r.timestamp,
                        "confidence": r.confidence,
                        "success": r.success,
                        "intensities": [repr(float(v)) for v in r.intensities],
                        "presences": r.presences.tolist(),
                        "interpolated": r.interpolated_mask.tolist(),
                    }
                )
                + "\n"
            )


def read_frame_store(path):
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line:
            raise ContractError("corrupt frame store: empty file")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError:
            raise ContractError("corrupt frame store: bad header") from None
        if header.get("format") != FRAME_STORE_FORMAT:
            raise ContractError("corrupt frame store: unknown format")
        if header.get("version") != FRAME_STORE_VERSION:
            raise ContractError(
                f"frame store version mismatch: {header.get('version')}"
            )
        records = []
        for line in fh:
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise ContractError("corrupt frame store: bad record line") from None
            records.append(
                FrameAURecord(
                    video_id=obj["video_id"],
                    frame_index=obj["frame"],
                    timestamp=obj["timestamp"],
                    confidence=obj["confidence"],
                    success=obj["success"],
                    intensities=np.array([float(v) for v in obj["intensities"]]),
                    presences=np.array(obj["presences"], dtype=np.int64),
                    interpolated_mask=np.array(obj["interpolated"], dtype=bool),
                )
            )
    return records


def reliable_detections(records, min_confidence=0.8):
    """Frames usable for knowledge extraction: successful and confident."""
    return [r for r in records if r.success and r.confidence >= min_confidence]

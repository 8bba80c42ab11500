import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aukit.domain import ContractError
from aukit.ingest import (
    interpolate_zero_intensities,
    load_frame_predictions,
    parse_openface_csv,
    read_frame_store,
    reliable_detections,
    write_frame_store,
)

from conftest import make_record, openface_csv


class TestParseOpenfaceCsv:
    def test_passthrough_values(self):
        text = openface_csv([{"AU01_r": "1.2", "AU01_c": "1.0"}])
        records = parse_openface_csv(text, "v1")
        assert len(records) == 1
        assert records[0].intensities[0] == 1.2
        assert records[0].presences[0] == 1
        assert records[0].success

    def test_column_order_independent(self):
        text = openface_csv([{"AU45_r": "2.5"}])
        lines = text.splitlines()
        header = lines[0].split(", ")
        order = list(reversed(range(len(header))))
        shuffled_header = ", ".join(header[i] for i in order)
        shuffled_rows = [
            ", ".join(line.split(", ")[i] for i in order) for line in lines[1:]
        ]
        records = parse_openface_csv(
            "\n".join([shuffled_header] + shuffled_rows), "v1"
        )
        assert records[0].intensities[-1] == 2.5  # AU45 is the last intensity

    def test_missing_column_rejected(self):
        text = openface_csv([{}], exclude=("AU45_r",))
        with pytest.raises(ContractError, match='"AU45_r"'):
            parse_openface_csv(text, "v1")

    def test_intensity_out_of_range_cites_row(self):
        text = openface_csv([{}, {"AU12_r": "6.3"}])
        with pytest.raises(ContractError, match="row 3"):
            parse_openface_csv(text, "v1")

    def test_presence_not_binary_rejected(self):
        text = openface_csv([{"AU01_c": "0.5"}])
        with pytest.raises(ContractError, match="AU01_c"):
            parse_openface_csv(text, "v1")

    def test_non_numeric_cell_cites_row_and_column(self):
        text = openface_csv([{"AU06_r": "oops"}])
        with pytest.raises(ContractError, match="row 2.*AU06_r"):
            parse_openface_csv(text, "v1")

    def test_failed_frames_retained_but_flagged(self):
        text = openface_csv([{"success": "0", "confidence": "0.1"}])
        records = parse_openface_csv(text, "v1")
        assert len(records) == 1
        assert not records[0].success

    def test_secondary_faces_dropped(self):
        text = openface_csv([{}, {"face_id": "1"}])
        records = parse_openface_csv(text, "v1")
        assert len(records) == 1

    def test_accepts_byte_stream(self):
        blob = openface_csv([{}]).encode("utf-8")
        records = parse_openface_csv(io.BytesIO(blob), "v1")
        assert len(records) == 1


class TestInterpolation:
    def _series(self, values, au=2):
        records = []
        for i, v in enumerate(values, start=1):
            intensities = np.ones(17)
            intensities[au] = v
            records.append(make_record(frame_index=i, intensities=intensities))
        return records

    def test_linear_midpoint(self):
        repaired, flags = interpolate_zero_intensities(self._series([1.0, 0.0, 3.0]))
        assert [r.intensities[2] for r in repaired] == [1.0, 2.0, 3.0]
        assert repaired[1].interpolated_mask[2]
        assert not flags

    def test_leading_zeros_take_nearest_nonzero(self):
        repaired, _ = interpolate_zero_intensities(self._series([0.0, 0.0, 2.0]))
        assert [r.intensities[2] for r in repaired] == [2.0, 2.0, 2.0]

    def test_all_zero_series_flagged_unchanged(self):
        repaired, flags = interpolate_zero_intensities(self._series([0.0, 0.0, 0.0]))
        assert [r.intensities[2] for r in repaired] == [0.0, 0.0, 0.0]
        assert flags == ["v0: AU04 all-zero"]

    def test_nonzero_values_never_change(self, rng):
        values = rng.uniform(0, 5, size=(20, 17))
        values[rng.random(values.shape) < 0.3] = 0.0
        records = [
            make_record(frame_index=i + 1, intensities=values[i]) for i in range(20)
        ]
        repaired, _ = interpolate_zero_intensities(records)
        out = np.stack([r.intensities for r in repaired])
        nonzero = values != 0
        assert np.array_equal(out[nonzero], values[nonzero])
        # no zeros remain in any column that had a nonzero value
        for j in range(17):
            if nonzero[:, j].any():
                assert np.all(out[:, j] > 0)

    def test_idempotent(self, rng):
        values = rng.uniform(0, 5, size=(12, 17))
        values[rng.random(values.shape) < 0.4] = 0.0
        records = [
            make_record(frame_index=i + 1, intensities=values[i]) for i in range(12)
        ]
        once, _ = interpolate_zero_intensities(records)
        twice, _ = interpolate_zero_intensities(once)
        assert np.array_equal(
            np.stack([r.intensities for r in once]),
            np.stack([r.intensities for r in twice]),
        )

    def test_mixed_videos_rejected(self):
        records = [make_record(video_id="a"), make_record(video_id="b", frame_index=2)]
        with pytest.raises(ContractError, match="multiple videos"):
            interpolate_zero_intensities(records)

    def test_unsorted_rejected(self):
        records = [make_record(frame_index=2), make_record(frame_index=1)]
        with pytest.raises(ContractError, match="sorted"):
            interpolate_zero_intensities(records)


class TestLoadFramePredictions:
    HEADER = "video_id,frame,label," + ",".join(f"s{j}" for j in range(7))

    def test_valid_simplex_point(self):
        text = self.HEADER + "\nv1,1,Happy,0.7,0.05,0.05,0.05,0.05,0.05,0.05\n"
        preds = load_frame_predictions(text)
        assert preds[0].asserted_label == 0
        assert preds[0].scores[0] == pytest.approx(0.7)

    def test_renormalizes_within_tolerance(self):
        text = self.HEADER + "\nv1,1,Sad,0.2005,0.3,0.1,0.1,0.1,0.1,0.1\n"
        preds = load_frame_predictions(text)
        assert preds[0].scores.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_bad_sum(self):
        text = self.HEADER + "\nv1,1,Sad,0.5,0.3,0.1,0.1,0.1,0.1,0.1\n"
        with pytest.raises(ContractError, match="sum"):
            load_frame_predictions(text)

    def test_rejects_negative_score(self):
        text = self.HEADER + "\nv1,1,Sad,-0.1,0.4,0.2,0.1,0.1,0.2,0.1\n"
        with pytest.raises(ContractError, match="negative"):
            load_frame_predictions(text)

    def test_rejects_unknown_label(self):
        text = self.HEADER + "\nv1,1,Calm,0.4,0.1,0.1,0.1,0.1,0.1,0.1\n"
        with pytest.raises(ContractError, match="Calm"):
            load_frame_predictions(text)


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_frame_store_roundtrip(tmp_path_factory, data):
    n = data.draw(st.integers(min_value=1, max_value=8))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31)))
    records = [
        make_record(
            video_id="vid",
            frame_index=i + 1,
            intensities=rng.uniform(0, 5, 17),
            presences=rng.integers(0, 2, 18),
            confidence=float(rng.uniform(0, 1)),
            success=bool(rng.integers(0, 2)),
        )
        for i in range(n)
    ]
    path = tmp_path_factory.mktemp("store") / "frames.ndjson"
    write_frame_store(records, path)
    loaded = read_frame_store(path)
    assert len(loaded) == n
    for a, b in zip(records, loaded):
        assert a.video_id == b.video_id
        assert a.frame_index == b.frame_index
        assert a.success == b.success
        assert np.array_equal(a.intensities, b.intensities)
        assert np.array_equal(a.presences, b.presences)
        assert np.array_equal(a.interpolated_mask, b.interpolated_mask)


def test_frame_store_rejects_garbage(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text("not json\n")
    with pytest.raises(ContractError, match="corrupt"):
        read_frame_store(path)


def test_reliable_detections_filters():
    records = [
        make_record(frame_index=1, confidence=0.95, success=True),
        make_record(frame_index=2, confidence=0.5, success=True),
        make_record(frame_index=3, confidence=0.95, success=False),
    ]
    kept = reliable_detections(records)
    assert [r.frame_index for r in kept] == [1]

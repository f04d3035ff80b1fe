import json

import numpy as np
import pytest

from skyforge.evaluate import EvalReport, _aggregate, evaluate, render_crops_for_records, write_report
from skyforge.relight import cumulative_curve


class TestAggregates:
    def test_recomputable_from_rows(self, rng):
        values = list(rng.random(101) * 5)
        agg = _aggregate(values)
        assert agg["median"] == pytest.approx(float(np.median(values)))
        assert agg["mean"] == pytest.approx(float(np.mean(values)))
        assert agg["p90"] == pytest.approx(float(np.percentile(values, 90)))


class TestRenderCropsForRecords:
    def test_counts_and_labels(self, tiny_dataset):
        root, records = tiny_dataset
        subset = records[:3]
        z_by_id = {r.id: np.zeros(64, np.float32) for r in subset}
        crops = render_crops_for_records(subset, root, z_by_id, per_sky=4, seed=0)
        assert len(crops) == 12
        for crop in crops:
            assert crop.z is not None
            expected = (crop.rel_sun_azimuth + crop.camera_azimuth + np.pi) % (2 * np.pi) - np.pi
            rec = next(r for r in subset if r.id == crop.source_id)
            assert expected == pytest.approx(rec.sun.azimuth, abs=1e-9)

    def test_deterministic(self, tiny_dataset):
        root, records = tiny_dataset
        a = render_crops_for_records(records[:2], root, None, per_sky=2, seed=5)
        b = render_crops_for_records(records[:2], root, None, per_sky=2, seed=5)
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)


class TestWriteReport:
    def test_json_and_curves(self, tmp_path, rng):
        rows = [
            {"source_id": f"{i:03d}", "rmse": float(rng.random()),
             "si_rmse": float(rng.random()), "sun_error_deg": float(rng.random() * 90)}
            for i in range(7)
        ]
        report = EvalReport(rows=rows)
        for metric in ("rmse", "si_rmse", "sun_error_deg"):
            report.aggregates[metric] = _aggregate([r[metric] for r in rows])
        report.curves["si_rmse"] = cumulative_curve([r["si_rmse"] for r in rows])
        write_report(report, tmp_path)
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["aggregates"]["rmse"]["median"] == pytest.approx(
            float(np.median([r["rmse"] for r in rows]))
        )
        lines = (tmp_path / "curve_si_rmse.csv").read_text().splitlines()
        assert lines[0] == "error,fraction"
        assert len(lines) == 8

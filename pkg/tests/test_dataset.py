import json
import math

import numpy as np
import pytest

from fusegp import dataset as ds
from fusegp.errors import DataError

HEADER = "sample_id,p_w,v_mm_s,l_um,h_um,sr_deg,material,phi_pct,hv\n"


def _write(tmp_path, body, name="data.csv", header=HEADER):
    path = tmp_path / name
    path.write_text(header + body, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_three_valid_rows(self, tmp_path):
        path = _write(tmp_path,
                      "s1,100,500,30,80,67,17-4PH,2.5,310\n"
                      "s2,200,800,40,90,90,17-4PH,1.5,350\n"
                      "s3,300,1200,50,100,67,316L,3.0,220\n")
        data = ds.load_csv(path)
        assert data.n == 3
        assert data.sources == ("17-4PH", "316L")
        assert data.ids == ["s1", "s2", "s3"]
        assert data.responses["phi"].tolist() == [2.5, 1.5, 3.0]
        assert data.points[1].sr == 90

    def test_missing_column(self, tmp_path):
        path = _write(tmp_path, "s1,100,500,30,80,67,17-4PH,2.5\n",
                      header="sample_id,p_w,v_mm_s,l_um,h_um,sr_deg,material,phi_pct\n")
        with pytest.raises(DataError, match="missing column hv"):
            ds.load_csv(path)

    def test_sr_outside_levels(self, tmp_path):
        path = _write(tmp_path, "s1,100,500,30,80,45,17-4PH,2.5,310\n")
        with pytest.raises(DataError, match=r"sr outside \{67,90\}"):
            ds.load_csv(path)

    def test_sr_outside_levels_allowed_without_validation(self, tmp_path):
        path = _write(tmp_path, "s1,100,500,30,80,45,17-4PH,2.5,310\n")
        data = ds.load_csv(path, validate=False)
        assert data.points[0].sr == 45

    def test_out_of_range_power(self, tmp_path):
        path = _write(tmp_path, "s1,500,500,30,80,67,17-4PH,2.5,310\n")
        with pytest.raises(DataError, match="p=500"):
            ds.load_csv(path)

    def test_unparseable_number(self, tmp_path):
        path = _write(tmp_path, "s1,abc,500,30,80,67,17-4PH,2.5,310\n")
        with pytest.raises(DataError, match="unparseable"):
            ds.load_csv(path)

    def test_duplicate_sample_id(self, tmp_path):
        path = _write(tmp_path,
                      "s1,100,500,30,80,67,17-4PH,2.5,310\n"
                      "s1,200,800,40,90,90,17-4PH,1.5,350\n")
        with pytest.raises(DataError, match="duplicate sample id"):
            ds.load_csv(path)

    def test_phi_range_always_enforced(self, tmp_path):
        path = _write(tmp_path, "s1,100,500,30,80,67,17-4PH,150,310\n")
        with pytest.raises(DataError, match="phi"):
            ds.load_csv(path, validate=False)


class TestNormalize:
    def _data(self, p_values, phi=(1.0, 2.0, 3.0), hv=(300.0, 310.0, 320.0)):
        points = [ds.ProcessPoint(p=p, v=200 + 100 * i, l=30 + 5 * i,
                                  h=80 + 10 * i, sr=(67.0 if i % 2 == 0 else 90.0),
                                  s="A")
                  for i, p in enumerate(p_values)]
        return ds.Dataset(ids=[f"s{i}" for i in range(len(points))], points=points,
                          responses={"phi": np.array(phi), "hv": np.array(hv)},
                          sources=("A",))

    def test_minmax_identity(self):
        scaled, spec = ds.normalize(self._data([80.0, 240.0, 400.0]))
        assert [pt.p for pt in scaled.points] == [0.0, 0.5, 1.0]

    def test_two_point_standardization(self):
        data = self._data([100.0, 200.0], phi=(10.0, 20.0), hv=(300.0, 400.0))
        scaled, spec = ds.normalize(data)
        assert scaled.responses["phi"] == pytest.approx(
            [-0.7071067811865475, 0.7071067811865475], abs=1e-12)

    def test_constant_column_rejected(self):
        points = [ds.ProcessPoint(p=100 + i, v=200 + i, l=30.0, h=80 + i,
                                  sr=67.0, s="A") for i in range(3)]
        data = ds.Dataset(ids=["a", "b", "c"], points=points,
                          responses={"phi": np.array([1.0, 2.0, 3.0]),
                                     "hv": np.array([300.0, 310.0, 320.0])},
                          sources=("A",))
        with pytest.raises(DataError, match="'l'"):
            ds.normalize(data)

    def test_sr_maps_to_binary(self):
        scaled, _ = ds.normalize(self._data([100.0, 200.0, 300.0]))
        assert [pt.sr for pt in scaled.points] == [0.0, 1.0, 0.0]

    def test_roundtrip_recovers_raw_values(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            raw = np.column_stack([
                rng.uniform(80, 400, 8), rng.uniform(150, 1500, 8),
                rng.uniform(20, 75, 8), rng.uniform(70, 120, 8),
                rng.choice([67.0, 90.0], 8)])
            raw[0, 4], raw[1, 4] = 67.0, 90.0  # both levels present
            points = [ds.ProcessPoint(*row, s="A") for row in raw]
            data = ds.Dataset(ids=[str(i) for i in range(8)], points=points,
                              responses={"phi": rng.uniform(0, 30, 8),
                                         "hv": rng.uniform(100, 400, 8)},
                              sources=("A",))
            scaled, spec = ds.normalize(data)
            back = spec.inverse_inputs(scaled.feature_matrix())
            rel = np.abs(back - raw) / np.maximum(np.abs(raw), 1e-300)
            assert rel.max() < 1e-12
            for name in ("phi", "hv"):
                y = spec.inverse_response(name, scaled.responses[name])
                rel = np.abs(y - data.responses[name]) / np.abs(data.responses[name])
                assert rel.max() < 1e-12

    def test_spec_serialization_roundtrip(self):
        _, spec = ds.normalize(self._data([80.0, 240.0, 400.0]))
        again = ds.NormalizationSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert np.array_equal(again.offset, spec.offset)
        assert np.array_equal(again.scale, spec.scale)
        assert again.response_mean == spec.response_mean


class TestComputeVed:
    def test_micrometer_conversion(self):
        assert ds.compute_ved(80, 150, 70, 20) == pytest.approx(380.95238095238096, rel=1e-12)

    def test_round_numbers(self):
        assert ds.compute_ved(200, 1000, 100, 50) == pytest.approx(40.0, abs=1e-12)

    def test_zero_speed_rejected(self):
        with pytest.raises(ValueError):
            ds.compute_ved(100, 0, 70, 20)

    def test_homogeneous_in_power(self):
        # exact equality holds for power-of-two factors, where float scaling
        # is lossless; other factors only match to round-off
        rng = np.random.default_rng(1)
        for _ in range(20):
            p, v, h, l = rng.uniform(1, 100, 4)
            c = float(2.0 ** rng.integers(-3, 4))
            assert ds.compute_ved(c * p, v, h, l) == c * ds.compute_ved(p, v, h, l)
            c2 = rng.uniform(0.5, 4)
            assert ds.compute_ved(c2 * p, v, h, l) == pytest.approx(
                c2 * ds.compute_ved(p, v, h, l), rel=1e-15)


class TestKfold:
    def test_even_partition(self):
        fold = ds.kfold(10, 5, 0)
        sizes = [fold.fold_indices(i).size for i in range(5)]
        assert sizes == [2, 2, 2, 2, 2]
        all_idx = np.concatenate([fold.fold_indices(i) for i in range(5)])
        assert sorted(all_idx.tolist()) == list(range(10))

    def test_balanced_remainder(self):
        fold = ds.kfold(11, 5, 0)
        sizes = sorted(fold.fold_indices(i).size for i in range(5))
        assert sizes == [2, 2, 2, 2, 3]

    def test_k_larger_than_n(self):
        with pytest.raises(ValueError):
            ds.kfold(3, 5, 0)

    def test_k_below_two(self):
        with pytest.raises(ValueError):
            ds.kfold(10, 1, 0)

    def test_partition_property(self):
        for n, k, seed in [(7, 2, 3), (20, 4, 9), (13, 5, 1)]:
            fold = ds.kfold(n, k, seed)
            folds = [set(fold.fold_indices(i).tolist()) for i in range(k)]
            assert set().union(*folds) == set(range(n))
            for i in range(k):
                for j in range(i + 1, k):
                    assert not folds[i] & folds[j]

    def test_seed_reproducibility(self):
        a = ds.kfold(50, 5, 42)
        b = ds.kfold(50, 5, 42)
        assert np.array_equal(a.assignment, b.assignment)
        assert not np.array_equal(a.assignment, ds.kfold(50, 5, 43).assignment)

    def test_json_serializable(self):
        doc = json.loads(ds.kfold(6, 3, 7).to_json())
        assert doc["k"] == 3 and len(doc["assignment"]) == 6

    def test_stratified_keeps_groups_per_fold(self):
        groups = ["A"] * 10 + ["B"] * 15
        fold = ds.stratified_kfold(groups, 5, 0)
        for i in range(5):
            members = [groups[j] for j in fold.fold_indices(i)]
            assert "A" in members and "B" in members


class TestMedianHardness:
    def test_integer_grid(self):
        assert ds.median_hardness(np.arange(1, 37)) == 18.5

    def test_constant_grid(self):
        assert ds.median_hardness(np.full(36, 300.0)) == 300.0

    def test_wrong_count(self):
        with pytest.raises(DataError, match="36 values"):
            ds.median_hardness(np.arange(35))

    def test_nonfinite_entry(self):
        grid = np.arange(36, dtype=float)
        grid[7] = math.nan
        with pytest.raises(DataError, match="non-finite"):
            ds.median_hardness(grid)

    def test_grid_file_roundtrip(self, tmp_path):
        values = np.arange(36, dtype=float).reshape(6, 6)
        path = tmp_path / "grid.csv"
        path.write_text("\n".join(",".join(str(v) for v in row) for row in values))
        grid = ds.load_hardness_grid(path)
        assert ds.median_hardness(grid) == 17.5

    def test_grid_file_bad_shape(self, tmp_path):
        path = tmp_path / "grid.csv"
        path.write_text("1,2,3\n4,5,6\n")
        with pytest.raises(DataError, match="expected 6 values"):
            ds.load_hardness_grid(path)


class TestMergeDatasets:
    def test_source_order_first_appearance(self, tmp_path):
        body_a = "a1,100,500,30,80,67,matA,2.0,300\n"
        body_b = "b1,100,500,30,80,67,matB,3.0,200\n"
        a = ds.load_csv(_write(tmp_path, body_a, "a.csv"))
        b = ds.load_csv(_write(tmp_path, body_b, "b.csv"))
        merged = ds.merge_datasets(a, b)
        assert merged.sources == ("matA", "matB")
        assert merged.n == 2

    def test_subset_restricts_sources(self, tmp_path):
        body = ("a1,100,500,30,80,67,matA,2.0,300\n"
                "b1,120,600,35,85,90,matB,3.0,200\n")
        data = ds.load_csv(_write(tmp_path, body))
        sub = data.subset([0])
        assert sub.sources == ("matA",)
        assert sub.responses["hv"].tolist() == [300.0]

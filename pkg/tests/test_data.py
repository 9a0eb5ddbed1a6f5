import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wddp.data import (DataError, DatasetSpec, Partition, SyntheticSpec, load_csv, make_two_gaussians,
                       normalize_rows, partition_equal, partition_random, partition_two_group,
                       train_test_split)
from wddp.losses import LabeledDataset


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestLoadCsv:
    def test_numeric_and_categorical(self, tmp_path):
        path = write(tmp_path, "age,colour,label\n20,red,yes\n40,blue,no\n30,red,yes\n")
        data = load_csv(DatasetSpec(path, "label", categorical_columns=("colour",)))
        assert data.feature_names == ("age", "colour=blue", "colour=red", "intercept")
        assert data.labels.tolist() == [1.0, 0.0, 1.0]  # "yes" sorts last
        data.check_normalized()
        assert data.max_row_norm() == pytest.approx(1.0)

    def test_positive_label(self, tmp_path):
        path = write(tmp_path, "x,label\n1,a\n2,b\n")
        assert load_csv(DatasetSpec(path, "label", positive_label="a")).labels.tolist() == [1.0, 0.0]

    def test_third_label_names_value_and_line(self, tmp_path):
        path = write(tmp_path, "x,label\n1,a\n2,b\n3,c\n")
        with pytest.raises(DataError, match=r":4: .*third distinct value 'c'"):
            load_csv(DatasetSpec(path, "label"))

    def test_bad_number_names_line(self, tmp_path):
        path = write(tmp_path, "x,label\n1,a\noops,b\n")
        with pytest.raises(DataError, match=r":3: column 'x'"):
            load_csv(DatasetSpec(path, "label"))

    def test_ragged_row(self, tmp_path):
        path = write(tmp_path, "x,label\n1,a\n2\n")
        with pytest.raises(DataError, match="expected 2 columns"):
            load_csv(DatasetSpec(path, "label"))

    def test_missing_label_column(self, tmp_path):
        with pytest.raises(DataError, match="not in header"):
            load_csv(DatasetSpec(write(tmp_path, "x,y\n1,2\n"), "label"))

    def test_constant_column_dropped(self, tmp_path):
        path = write(tmp_path, "x,c,label\n1,5,a\n2,5,b\n")
        with pytest.warns(UserWarning, match="constant"):
            data = load_csv(DatasetSpec(path, "label"))
        assert "c" not in data.feature_names

    def test_empty(self, tmp_path):
        with pytest.raises(DataError, match="empty"):
            load_csv(DatasetSpec(write(tmp_path, ""), "label"))
        with pytest.raises(DataError, match="no data rows"):
            load_csv(DatasetSpec(write(tmp_path, "x,label\n", "e2.csv"), "label"))

    def test_file_untouched(self, tmp_path):
        text = "x,label\n1,a\n2,b\n"
        path = write(tmp_path, text)
        load_csv(DatasetSpec(path, "label"))
        assert (tmp_path / "d.csv").read_text() == text


class TestNormalize:
    def test_divides_by_max(self):
        out = normalize_rows(np.array([[3.0, 4.0], [0.3, 0.4]]))
        assert np.allclose(out, [[0.6, 0.8], [0.06, 0.08]])

    def test_zero_matrix(self):
        assert np.array_equal(normalize_rows(np.zeros((2, 2))), np.zeros((2, 2)))


class TestSplit:
    def test_sizes_and_disjoint(self):
        data = make_two_gaussians(SyntheticSpec(n=100))
        train, test = train_test_split(data, 0.8, 0)
        assert (train.n, test.n) == (80, 20)
        rows = {tuple(r) for r in train.features} | {tuple(r) for r in test.features}
        assert len(rows) == 100

    def test_degenerate(self):
        data = LabeledDataset(np.zeros((2, 1)), np.zeros(2))
        with pytest.raises(DataError):
            train_test_split(data, 0.1, 0)


class TestPartitions:
    @settings(max_examples=60)
    @given(n=st.integers(200, 3000), m=st.integers(2, 20), u=st.floats(1, 9), seed=st.integers(0, 100))
    def test_two_group_covers_and_ratio(self, n, m, u, seed):
        try:
            part = partition_two_group(n, m, u, seed=seed)
        except DataError:
            return
        part.check(n)
        a = m // 2
        large, small = part.client_sizes[a], part.client_sizes[-1]  # unaffected by remainder when a < m
        assert part.total == n
        assert max(part.client_sizes) - min(part.client_sizes) >= 0
        # sizes within one sample of the target ratio
        assert abs(part.client_sizes[a - 1] / part.client_sizes[-1] - u) <= (u + 1) / part.client_sizes[-1] + 1e-9

    def test_two_group_example(self):
        part = partition_two_group(1600, 16, 9.0, seed=0)
        assert part.client_sizes[:8] == (180,) * 8 and part.client_sizes[8:] == (20,) * 8
        assert part.non_average_u == 9.0

    def test_u_one_is_equal(self):
        part = partition_two_group(1600, 16, 1.0)
        assert set(part.client_sizes) == {100}

    def test_min_size_floor(self):
        with pytest.raises(DataError, match="below the floor"):
            partition_two_group(200, 16, 9.0)

    def test_bad_args(self):
        with pytest.raises(ValueError):
            partition_two_group(100, 4, 0.5)
        with pytest.raises(ValueError):
            partition_two_group(100, 4, 2.0, group_a_count=4)

    @settings(max_examples=60)
    @given(n=st.integers(50, 2000), m=st.integers(1, 10), seed=st.integers(0, 1000))
    def test_random_partition(self, n, m, seed):
        part = partition_random(n, m, 5, seed)
        part.check(n)
        assert part.m == m and min(part.client_sizes) >= 5

    def test_random_infeasible(self):
        with pytest.raises(DataError):
            partition_random(30, 4, 10)

    def test_equal(self):
        part = partition_equal(10, 3)
        assert part.client_sizes == (4, 3, 3)
        part.check(10)

    def test_json_round_trip(self):
        part = partition_two_group(400, 4, 3.0, seed=2)
        back = Partition.from_json(part.to_json())
        assert back.client_sizes == part.client_sizes
        assert all(np.array_equal(a, b) for a, b in zip(back.assignments, part.assignments))
        assert json.loads(part.to_json())["client_sizes"] == list(part.client_sizes)

    def test_deterministic(self):
        a, b = partition_random(500, 5, 10, 9), partition_random(500, 5, 10, 9)
        assert a.client_sizes == b.client_sizes

    def test_check_rejects_overlap(self):
        part = Partition((2, 2), [np.array([0, 1]), np.array([1, 2])])
        with pytest.raises(ValueError):
            part.check(4)

    def test_weights(self):
        part = Partition((1, 3), [np.array([0]), np.array([1, 2, 3])])
        assert np.allclose(part.weights, [0.25, 0.75])


class TestSynthetic:
    def test_shape_and_norm(self):
        data = make_two_gaussians(SyntheticSpec(n=300, dim=5, seed=4))
        assert (data.n, data.d) == (300, 5)
        data.check_normalized()

    def test_deterministic(self):
        a = make_two_gaussians(SyntheticSpec(seed=3))
        b = make_two_gaussians(SyntheticSpec(seed=3))
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)

import io

import numpy as np
import pytest

from zoqlab.errors import DataError, DimensionError
from zoqlab.numerics import (
    RngStream,
    from_groups,
    gaussian,
    matmul,
    normals_at,
    per_channel,
    per_group,
    per_tensor,
    per_token,
    read_tensor,
    reduce_stats,
    to_groups,
    write_tensor,
)

from oracles import naive_matmul


class TestMatmul:
    def test_identity(self):
        out = matmul(np.eye(2), np.array([[5.0, 6.0], [7.0, 8.0]]))
        assert np.array_equal(out, [[5.0, 6.0], [7.0, 8.0]])

    def test_dot_product(self):
        assert np.array_equal(matmul([[1.0, 2.0]], [[3.0], [4.0]]), [[11.0]])

    def test_integer_valued_matches_oracle_exactly(self):
        rng = np.random.default_rng(0)
        a = rng.integers(-8, 9, size=(4, 5)).astype(np.float64)
        b = rng.integers(-8, 9, size=(5, 3)).astype(np.float64)
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) == 0.0

    @pytest.mark.parametrize("m,k,n", [(4, 5, 3), (16, 16, 16), (64, 64, 64)])
    def test_random_matches_oracle(self, m, k, n):
        rng = np.random.default_rng(m * 100 + n)
        a = rng.uniform(-1, 1, size=(m, k))
        b = rng.uniform(-1, 1, size=(k, n))
        got = matmul(a, b)
        want = naive_matmul(a, b)
        # relative to the accumulation scale, so cancellation-prone elements
        # are judged against the magnitudes actually summed
        scale = np.maximum(np.abs(a) @ np.abs(b), 1e-30)
        assert np.max(np.abs(got - want) / scale) <= 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 2)))


class TestGaussianStreams:
    def test_same_seed_stream_bitwise_identical(self):
        a = gaussian(RngStream(7, 0), 100)
        b = gaussian(RngStream(7, 0), 100)
        assert np.array_equal(a, b)

    def test_moments_one_million_draws(self):
        z = gaussian(RngStream(12345, 0), 10**6)
        assert abs(z.mean()) <= 4 / np.sqrt(10**6)
        assert abs(z.var() - 1.0) <= 0.01

    def test_streams_uncorrelated(self):
        a = gaussian(RngStream(7, 0), 10**5)
        b = gaussian(RngStream(7, 1), 10**5)
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 0.01

    def test_replay_from_recorded_position(self):
        stream = RngStream(3, 9)
        gaussian(stream, 137)
        state = stream.state()
        expected = gaussian(stream, 50)
        replay = gaussian(RngStream(*state), 50)
        assert np.array_equal(expected, replay)

    def test_chunked_draws_equal_one_shot(self):
        whole = normals_at(11, 2, 0, 200)
        parts = [normals_at(11, 2, p, n) for p, n in ((0, 63), (63, 1), (64, 100), (164, 36))]
        assert np.array_equal(whole, np.concatenate(parts))

    def test_position_advances_by_n(self):
        stream = RngStream(1, 0)
        gaussian(stream, 17)
        assert stream.position == 17

    def test_draws_always_finite(self):
        z = gaussian(RngStream(0, 0), 10**5)
        assert np.all(np.isfinite(z))

    def test_zero_draws_rejected(self):
        with pytest.raises(DataError):
            gaussian(RngStream(0, 0), 0)


class TestReduceStats:
    def test_per_tensor(self):
        stats = reduce_stats(np.array([-1.0, 0.5, 2.0]), per_tensor())
        assert list(stats) == [(-1.0, 2.0, 2.0)]

    def test_per_channel_columns(self):
        stats = reduce_stats(np.array([[1.0, -3.0], [2.0, 4.0]]), per_channel(axis=1))
        assert list(stats) == [(1.0, 2.0, 2.0), (-3.0, 4.0, 4.0)]

    def test_per_group_chunks(self):
        stats = reduce_stats(np.array([1.0, 2.0, 3.0, 8.0]), per_group(axis=0, group_size=2))
        assert list(stats) == [(1.0, 2.0, 2.0), (3.0, 8.0, 8.0)]

    def test_per_token_rows(self):
        stats = reduce_stats(np.array([[1.0, -2.0], [5.0, 0.0]]), per_token())
        assert list(stats) == [(-2.0, 1.0, 2.0), (0.0, 5.0, 5.0)]

    def test_ragged_groups_rejected(self):
        with pytest.raises(DimensionError, match="does not divide"):
            reduce_stats(np.arange(6, dtype=np.float64), per_group(axis=0, group_size=4))

    @pytest.mark.parametrize(
        "shape,gran",
        [
            ((6,), per_tensor()),
            ((4, 6), per_token()),
            ((4, 6), per_channel(axis=0)),
            ((4, 6), per_channel(axis=1)),
            ((4, 6), per_group(axis=0, group_size=2)),
            ((4, 6), per_group(axis=1, group_size=3)),
            ((2, 3, 4), per_channel(axis=2)),
        ],
    )
    def test_groups_partition_tensor(self, shape, gran):
        rng = np.random.default_rng(hash(gran.kind) % 1000)
        x = rng.normal(size=shape)
        groups = to_groups(x, gran)
        assert groups.size == x.size
        assert np.array_equal(from_groups(groups, x.shape, gran), x)


class TestTensorContainer:
    def test_round_trip_bitwise(self):
        x = np.random.default_rng(5).normal(size=(3, 4, 5))
        buf = io.BytesIO()
        write_tensor(buf, x)
        buf.seek(0)
        back = read_tensor(buf)
        assert back.shape == x.shape
        assert np.array_equal(back, x)

    def test_header_layout(self):
        buf = io.BytesIO()
        write_tensor(buf, np.zeros((2, 3)))
        raw = buf.getvalue()
        assert raw[:8] == b"ZQLB-TNS"
        assert len(raw) == 16 + 8 + 2 * 8 + 6 * 8

    def test_bad_magic_rejected(self):
        with pytest.raises(DataError, match="magic"):
            read_tensor(io.BytesIO(b"X" * 64))

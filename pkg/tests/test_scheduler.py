import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from assoftmax.errors import ConfigError, ContractError
from assoftmax.masking import BatchMaskStats
from assoftmax.scheduler import AccumState, check_accum_series, raw_steps, should_step, update


class TestUpdate:
    def test_half_masked(self):
        s = AccumState(lam=1.0, s_max=4)
        assert update(s, BatchMaskStats(32, 16)) == 2 and s.current == 2

    def test_never_decreases(self):
        s = AccumState(lam=0.5, s_max=4, current=2)
        assert raw_steps(0.5, BatchMaskStats(32, 0)) == 0.5
        assert s.update(BatchMaskStats(32, 0)) == 2

    def test_cap(self):
        s = AccumState(lam=0.5, s_max=5, current=5)
        assert raw_steps(0.5, BatchMaskStats(32, 31)) == 16
        assert s.update(BatchMaskStats(32, 31)) == 5

    def test_increment_at_most_one(self):
        s = AccumState(lam=1.0, s_max=10)
        assert s.update(BatchMaskStats(32, 31)) == 2

    def test_fully_masked_batch(self):
        assert math.isinf(raw_steps(1.0, BatchMaskStats(8, 8)))
        s = AccumState(lam=1.0, s_max=3, current=3)
        assert s.update(BatchMaskStats(8, 8)) == 3

    def test_tiny_lambda_stays_one(self):
        s = AccumState(lam=1e-9, s_max=4)
        for m in range(32):
            assert s.update(BatchMaskStats(32, m)) == 1

    @given(st.floats(0.01, 5), st.integers(1, 8),
           st.lists(st.tuples(st.integers(1, 64), st.floats(0, 1)), min_size=1, max_size=60))
    def test_restrictions_hold(self, lam, s_max, batches):
        s = AccumState(lam=lam, s_max=s_max)
        series = [s.update(BatchMaskStats(n, int(f * n))) for n, f in batches]
        check_accum_series(series, s_max)

    def test_config_errors(self):
        for kw in ({"lam": 0}, {"s_max": 0}, {"s_max": 2.5}, {"s_max": 2, "current": 3}):
            with pytest.raises(ConfigError):
                AccumState(**kw)


class TestShouldStep:
    def test_examples(self):
        assert all(should_step(i, 1) for i in range(10))
        assert [i for i in range(6) if should_step(i, 2)] == [1, 3, 5]
        assert [i for i in range(8) if should_step(i, 4)] == [3, 7]

    def test_errors(self):
        with pytest.raises(ContractError):
            should_step(0, 0)
        with pytest.raises(ContractError):
            should_step(-1, 1)


class TestSeriesCheck:
    @pytest.mark.parametrize("series", [[1, 3], [2, 1], [1, 2, 3, 4, 5], [0]])
    def test_rejects(self, series):
        with pytest.raises(ContractError):
            check_accum_series(series, 4)

    def test_accepts(self):
        check_accum_series([1, 1, 2, 2, 3, 4, 4], 4)
        check_accum_series([], 4)

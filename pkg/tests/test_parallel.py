"""測試執行緒政策與分塊平行處理"""

import numpy as np
import pytest

from xmodal_depth.core.parallel import THREADS_ENV_VAR, ThreadPolicy, chunk_bounds, map_chunks


@pytest.fixture
def fixed_cpu(monkeypatch):
    """固定 CPU 核心數"""
    monkeypatch.setattr("xmodal_depth.core.parallel.os.cpu_count", lambda: 6)


@pytest.mark.parametrize(
    "raw, expected",
    [("", 6), ("0", 6), ("3", 3), ("-2", 6), ("many", 6), (" 4 ", 4)],
)
def test_detect_threads(fixed_cpu, raw, expected):
    """測試 XMODAL_THREADS 的解析"""
    assert ThreadPolicy.detect({THREADS_ENV_VAR: raw}) == expected


def test_detect_unset(fixed_cpu):
    """測試未設定環境變數時為自動"""
    assert ThreadPolicy.detect({}) == 6


def test_resolve_prefers_explicit(fixed_cpu, monkeypatch):
    """測試明確指定優先於環境變數"""
    monkeypatch.setenv(THREADS_ENV_VAR, "2")
    assert ThreadPolicy.resolve(5) == 5
    assert ThreadPolicy.resolve(None) == 2


def test_chunk_bounds_cover_range():
    """測試區段連續且涵蓋全部項目"""
    bounds = chunk_bounds(10, 3)
    assert bounds == [(0, 4), (4, 7), (7, 10)]
    assert chunk_bounds(2, 8) == [(0, 1), (1, 2)]
    assert chunk_bounds(0, 4) == []


def test_map_chunks_independent_of_threads():
    """測試結果與執行緒數無關"""
    data = np.random.default_rng(0).normal(size=1001)

    def work(start, stop):
        return np.exp(-data[start:stop] ** 2)

    serial = np.concatenate(map_chunks(work, data.size, threads=1))
    threaded = np.concatenate(map_chunks(work, data.size, threads=4))
    assert len(map_chunks(work, data.size, threads=4)) == 4
    np.testing.assert_array_equal(serial, threaded)

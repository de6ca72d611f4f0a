import math
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shaheen_sim.seccheck import (CacheConfig, CacheModel, ChannelMatrix, ExperimentConfig,
                                  FenceConfig, HostUarch, TlbModel, build_channel_matrix,
                                  covert_experiment, fence_t, heatmap_pixels, mutual_information,
                                  read_matrix_csv, read_pgm, render_heatmap, run_prime_probe,
                                  samples_csv, switch_overhead)

TINY = CacheConfig(sets=4, ways=2, line_size=16)


class LruOracle:
    def __init__(self, sets, ways, line):
        self.sets = [OrderedDict() for _ in range(sets)]
        self.ways, self.line = ways, line

    def access(self, addr):
        ln = addr // self.line
        s = self.sets[ln % len(self.sets)]
        if ln in s:
            s.move_to_end(ln)
            return True
        if len(s) == self.ways:
            s.popitem(last=False)
        s[ln] = None
        return False


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 16 * 40), max_size=200))
def test_cache_matches_lru_oracle(addrs):
    c = CacheModel(TINY)
    o = LruOracle(4, 2, 16)
    for a in addrs:
        assert c.access(a)[0] == o.access(a)


def test_cache_latencies():
    c = CacheModel()
    assert c.access(0x100) == (False, 40)
    assert c.access(0x104) == (True, 1)
    assert c.cfg.capacity == 32 * 1024


def test_tlb_lru():
    t = TlbModel()
    for p in range(16):
        t.access(p * 4096)
    assert t.access(0)[0]
    t.access(16 * 4096)  # evicts page 1, the least recent
    assert not t.access(4096)[0]


def test_fence_clears_everything():
    u = HostUarch()
    for a in range(0, 4096, 16):
        u.access(a)
    u, cost = fence_t(u)
    assert u.state() == (HostUarch().state()[0], (), "idle")
    assert cost == 256 + 16 + 8


def test_fence_cost_budget():
    assert FenceConfig().cost(CacheConfig()) <= 320


def test_probe_time_is_linear_in_secret():
    cfg = ExperimentConfig(n=32)
    times = dict(run_prime_probe(cfg))
    step = cfg.cache.miss_latency - cfg.cache.hit_latency
    assert all(times[s] - times[0] == s * step for s in range(33))


def test_fenced_probe_is_constant():
    times = {t for _, t in run_prime_probe(ExperimentConfig(n=32, fence=True))}
    assert len(times) == 1


def uniform_bijective(k):
    return [(s, 1000 + s) for s in range(k)]


def test_mi_bijective_is_log2():
    m = build_channel_matrix(uniform_bijective(16))
    assert mutual_information(m) == pytest.approx(4.0)


def test_mi_identical_rows_zero():
    m = build_channel_matrix([(s, t) for s in range(8) for t in (5, 6, 7)])
    assert mutual_information(m) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 20)), min_size=1, max_size=80))
def test_mi_bounds(samples):
    m = build_channel_matrix(samples)
    mi = mutual_information(m)
    assert 0 <= mi <= math.log2(len(m.secrets)) + 1e-9
    assert np.allclose(m.probs.sum(axis=1), 1)


def test_binned_matrix():
    m = build_channel_matrix(uniform_bijective(16), bins=4)
    assert m.probs.shape == (16, 4)
    assert mutual_information(m) == pytest.approx(2.0)


def test_noise_reduces_information():
    clean = covert_experiment(n=16, trials=4, noise=0, fences=(False,))["nofence"]["mi_bits"]
    noisy = covert_experiment(n=16, trials=4, noise=200, fences=(False,))["nofence"]["mi_bits"]
    assert clean == pytest.approx(math.log2(17))
    assert noisy < clean


def test_covert_small_run():
    r = covert_experiment(n=32)
    assert r["nofence"]["mi_bits"] == pytest.approx(math.log2(33))
    assert r["fence"]["mi_bits"] <= 0.1
    assert r["fence"]["overhead"]["switch_with_fence"] == 150 + 280


def test_switch_overhead():
    assert switch_overhead(ExperimentConfig()) == {"switch": 150, "fence": 280,
                                                   "switch_with_fence": 430}


def test_heatmap_orientation():
    # secret 0 has the smallest time: bottom-left pixel is bright
    m = build_channel_matrix(uniform_bijective(4))
    img = heatmap_pixels(m)
    assert img[-1, 0] == 255 and img[0, -1] == 255 and img[0, 0] == 0


def test_pgm_roundtrip(tmp_path):
    m = build_channel_matrix(uniform_bijective(5))
    blob = render_heatmap(m, tmp_path / "h.pgm")
    assert (tmp_path / "h.pgm").read_bytes() == blob
    assert np.array_equal(read_pgm(blob), heatmap_pixels(m))


def test_csv_roundtrip():
    m = build_channel_matrix([(0, 3), (0, 4), (1, 4)])
    back = read_matrix_csv(render_heatmap(m, fmt="csv").decode())
    assert np.array_equal(back.secrets, m.secrets)
    assert np.array_equal(back.times, m.times)
    assert np.array_equal(back.probs, m.probs)


def test_samples_csv():
    assert samples_csv([(0, 10), (1, 49)]) == b"secret,time\n0,10\n1,49\n"


def test_bad_inputs():
    with pytest.raises(ValueError):
        ExperimentConfig(n=-1)
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError):
        render_heatmap(build_channel_matrix([(0, 1)]), fmt="png")
    with pytest.raises(ValueError):
        build_channel_matrix([])
    with pytest.raises(ValueError):
        ChannelMatrix(np.arange(2), np.arange(3), np.zeros((3, 2)))

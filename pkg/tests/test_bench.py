import numpy as np
import pytest

from shaheen_sim.bench import (KernelSpec, TABLE3_PAIRS, conv_spec, fp_spec, gen_conv1d,
                               gen_fp_matmul, gen_matmul, run_kernel)
from shaheen_sim.bench.matmul import schedule_loads
from shaheen_sim.bench.report import load_table3_config, table3_check
from shaheen_sim.bench.tiling import tiled_layer_demo
from shaheen_sim.cluster import ClusterConfig

SMALL = {"channels": 8, "pixels": 4, "k": 64}
MODES = [(a, b, m) for a, b in TABLE3_PAIRS for m in ("flexv", "xpulpnn", "xpulpv2")
         if not (m == "xpulpv2" and a < 8)]


@pytest.mark.parametrize("a,b,mode", MODES)
def test_small_matmul_correct_and_bounded(a, b, mode):
    spec = KernelSpec("matmul-int", dict(SMALL), a, b, mode=mode, cores=4)
    rep, stats, _ = run_kernel(gen_matmul(spec))
    assert rep.correct
    assert rep.meta["counted_macs"] == rep.macs == 8 * 4 * 64
    assert rep.mac_per_cycle <= 4 * (32 // a)


def test_zero_activations_give_zero():
    spec = KernelSpec("matmul-int", dict(SMALL, zero_activations=True), 8, 4, cores=2)
    k = gen_matmul(spec)
    assert not k.expected.any()
    rep, _, cl = run_kernel(k)
    assert rep.correct and not k.output(cl).any()


def test_reference_output_is_plain_matmul():
    spec = KernelSpec("matmul-int", dict(SMALL), 4, 2, cores=1)
    k = gen_matmul(spec)
    rng = np.random.default_rng(0)
    x = rng.integers(0, 16, size=(4, 64))
    w = rng.integers(-2, 2, size=(8, 64))
    assert np.array_equal(k.expected, (x @ w.T).astype(np.int32))


def test_gops_definition():
    rep, _, _ = run_kernel(gen_matmul(KernelSpec("matmul-int", dict(SMALL), 8, 8, cores=2)))
    assert rep.gops == pytest.approx(2 * rep.mac_per_cycle * 500e6 / 1e9)


def test_mixed_kernel_beats_unpack():
    flex = run_kernel(gen_matmul(KernelSpec("matmul-int", dict(SMALL), 8, 2, cores=1)))[0]
    nn = run_kernel(gen_matmul(KernelSpec("matmul-int", dict(SMALL), 8, 2, mode="xpulpnn",
                                          cores=1)))[0]
    assert flex.mac_per_cycle > 3 * nn.mac_per_cycle


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("matmul-int", {}, 16, 16)
    with pytest.raises(ValueError):
        KernelSpec("matmul-int", {}, 4, 4, mode="xpulpv2")
    with pytest.raises(ValueError):
        gen_matmul(KernelSpec("matmul-int", {"channels": 6, "pixels": 4, "k": 64}, 8, 8))


def test_schedule_loads_distinct_slots():
    uses = {"n0": [0, 2], "n1": [1, 3], "n2": [4, 5]}
    slots = schedule_loads(uses, 8)
    assert len({s for s, _ in slots.values()}) == 3
    for reg, (s, nxt) in slots.items():
        assert (s >= max(uses[reg])) if nxt else (s < min(uses[reg]))


def test_table3_config_is_committed():
    t = load_table3_config()
    assert set(t["pairs"]) == {f"{a},{b}" for a, b in TABLE3_PAIRS}
    assert t["reference"]["flexv"]["2,2"] == 91.5


def test_table3_check_tolerance():
    rows = [{"a_width": 2, "b_width": 2, "flexv": 80.0, "flexv_ref": 91.5},
            {"a_width": 8, "b_width": 8, "flexv": 26.0, "flexv_ref": 26.9}]
    assert [ok for _, ok, _ in table3_check(rows)] == [True, True]
    assert not table3_check(rows, tol=0.05)[0][1]


@pytest.mark.parametrize("kind", ["fp32", "fp16", "bfloat16"])
def test_fp_matmul_bit_exact(kind):
    k = gen_fp_matmul(fp_spec(kind, 2, dims={"M": 8, "N": 8, "K": 16, "block": [4, 2]}))
    rep, _, _ = run_kernel(k)
    assert rep.correct
    assert rep.flops == 2 * 8 * 8 * 16


def test_fp16_k_limit():
    with pytest.raises(ValueError):
        gen_fp_matmul(fp_spec("fp16", 1, dims={"M": 8, "N": 8, "K": 128, "block": [4, 2]}))


def test_conv1d_matches_correlation():
    k = gen_conv1d(conv_spec(cores=4, dims={"length": 64, "taps": 5}))
    syms = k.program.symbols
    seg = {s.address: s.data for s in k.program.data}
    x = np.frombuffer(seg[syms["signal"]], dtype=np.int8).astype(np.int64)
    h = np.frombuffer(seg[syms["taps"]], dtype=np.int8).astype(np.int64)
    want = np.correlate(x, h, mode="valid")[:64]
    rep, _, cl = run_kernel(k)
    assert np.array_equal(k.output(cl), want.astype(np.int32))
    assert rep.correct


def test_tiling_small_layer():
    rep = tiled_layer_demo({"bytes": 4096, "intensity": 2}, {"tile": 1024}, cores=4)
    assert rep.correct
    assert 0 <= rep.meta["overlap"] <= 1
    assert rep.meta["dma_bytes"] >= 4096


def test_tiling_rejects_bad_tile():
    with pytest.raises(ValueError):
        tiled_layer_demo({"bytes": 4096}, {"tile": 1000})


def test_bench_is_deterministic():
    spec = KernelSpec("matmul-int", dict(SMALL), 8, 4, cores=4)
    a = run_kernel(gen_matmul(spec))[0].to_dict()
    b = run_kernel(gen_matmul(spec))[0].to_dict()
    assert a == b


def test_cluster_config_override():
    rep, _, _ = run_kernel(gen_matmul(KernelSpec("matmul-int", dict(SMALL), 8, 8, cores=2)),
                           ClusterConfig(clock_hz=250e6))
    assert rep.clock_hz == 250e6

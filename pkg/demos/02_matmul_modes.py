# %% [markdown]
# # MatMul throughput across the three ISA levels
#
# The same output-stationary kernel is generated for XpulpV2, XpulpNN and
# Flex-V and run on the cycle-stepped cluster.  Mixed pairs are where the
# extension pays off: without it the weights have to be unpacked in software.

# %%
import numpy as np

from shaheen_sim.bench import KernelSpec, gen_matmul, run_kernel
from shaheen_sim.bench.report import load_table3_config, table3

# %% a single kernel, small enough to inspect
spec = KernelSpec("matmul-int", {"channels": 8, "pixels": 4, "k": 64}, 8, 4, cores=2)
kernel = gen_matmul(spec)
lines = kernel.source.splitlines()
start = next(i for i, ln in enumerate(lines) if "lp.setup" in ln)
print("\n".join(lines[start:start + 10]))  # head of the Mac&Load loop
rep, stats, cluster = run_kernel(kernel)
print(rep.name, f"{rep.mac_per_cycle:.2f} MAC/cycle", "correct" if rep.correct else "WRONG")
print("output block:\n", kernel.output(cluster)[:2, :4])

# %% the full table (about five seconds)
rows = table3(load_table3_config())
print(f"{'pair':>6} {'Flex-V':>8} {'XpulpNN':>8} {'XpulpV2':>8} {'speedup':>8}")
for r in rows:
    v2 = f"{r['xpulpv2']:.2f}" if r["xpulpv2"] else "-"
    print(f"{r['a_width']},{r['b_width']:<4} {r['flexv']:8.2f} {r['xpulpnn']:8.2f} {v2:>8} "
          f"{r['speedup_vs_xpulpnn']:7.2f}x")

# %% deviation from the published column
dev = np.array([r["flexv"] / r["flexv_ref"] - 1 for r in rows])
print("max |deviation| =", f"{np.abs(dev).max():.1%}")

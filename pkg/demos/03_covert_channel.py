# %% [markdown]
# # A cache timing channel and what fence.t does to it
#
# The Trojan touches ``s`` cache lines; the spy times a probe of its own
# primed buffer.  Every Trojan line costs the spy one miss, so the probe time
# encodes ``s`` exactly.  Flushing the cache, TLB and controller state on each
# context switch makes the probe time constant.

# %%
import numpy as np

from shaheen_sim.seccheck import build_channel_matrix, covert_experiment, heatmap_pixels

res = covert_experiment(n=64)
for key, r in res.items():
    print(f"{key:8s} MI = {r['mi_bits']:.3f} bits, switch cost {r['overhead']}")

# %% channel matrices as ASCII heatmaps, time binned and growing upward
def ascii(samples, bins=16):
    img = heatmap_pixels(build_channel_matrix(samples, bins=bins))
    ramp = " .:-=+*#%@"
    return "\n".join("".join(ramp[min(9, int(v) * 10 // 256)] for v in row[::2]) for row in img)

print(ascii(res["nofence"]["samples"]))
print()
print(ascii(res["fence"]["samples"]))

# %% the unfenced probe time is linear in the secret
s = np.array([x for x, _ in res["nofence"]["samples"]])
t = np.array([y for _, y in res["nofence"]["samples"]])
slope, icpt = np.polyfit(s, t, 1)
print(f"t ~ {icpt:.0f} + {slope:.2f} * s")

# %% [markdown]
# With jitter the plug-in estimate is biased upward: a finite sample of pure
# noise still looks a little informative.  The bias shrinks as trials per
# secret grow, while the unfenced channel keeps its bits.

# %%
from shaheen_sim.seccheck import mutual_information

for trials in (8, 32, 128):
    noisy = covert_experiment(n=64, trials=trials, noise=60, seed=1)
    mi = {k: mutual_information(build_channel_matrix(r["samples"], bins=8))
          for k, r in noisy.items()}
    print(f"{trials:4d} trials, 8 bins: no fence {mi['nofence']:.2f} bits, "
          f"fence {mi['fence']:.3f} bits")

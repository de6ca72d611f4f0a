# %% [markdown]
# # Mixed-precision dot products, one instruction at a time
#
# A Flex-V core keeps the operation in the opcode and the operand widths in
# the SIMD_FMT CSR.  With 8-bit activations and 4-bit weights one weight
# register holds two instructions' worth of nibbles, and MPC_CNT picks the half.

# %%
import numpy as np

from shaheen_sim import asm, isa
from shaheen_sim.isa import SimdFormat, slice_and_route

fmt = SimdFormat(8, 4)
w = 0x87654321
[slice_and_route(w, fmt, mpc) for mpc in range(fmt.ratio)]
# -> [[1, 2, 3, 4], [5, 6, 7, -8]]

# %% one register, two instructions
src = f"""
    li x4, 0x01010101        # four activations = 1
    li x5, {w}
    csrwi simd_fmt, {fmt.to_csr()}
    pv.sdotusp x3, x4, x5     # nibbles 0..3
    pv.sdotusp x3, x4, x5     # nibbles 4..7
    ecall
"""
core = isa.CoreState()
isa.run_functional(asm.assemble(src), isa.FlatMemory(), core)
print("acc =", isa.s32(core.regs[3]), " mpc_cnt =", core.mpc_cnt)

# %% same sum with numpy
nibbles = np.array([(w >> (4 * i)) & 0xF for i in range(8)])
nibbles = np.where(nibbles >= 8, nibbles - 16, nibbles)
print("numpy :", int(nibbles.sum()))

# %% lanes per instruction follow the wider operand
for a, b in sorted(isa.SUPPORTED_PAIRS, reverse=True):
    f = SimdFormat(a, b)
    print(f"a={a:2d} b={b:2d}  lanes={f.lanes:2d}  slices per weight word={f.ratio}")

"""Kernel generators and experiment drivers."""
from .common import (MODES, TABLE3_PAIRS, BenchReport, Kernel, KernelSpec, dump_reports,
                     run_kernel)
from .conv import conv_spec, gen_conv1d
from .fp import fp_spec, gen_fp_matmul
from .matmul import gen_matmul
from .report import (compare_modes, fp_suite, load_table3_config, offload_suite, table3,
                     table3_check, tiling_suite)
from .tiling import gen_tiled_layer, tiled_layer_demo

__all__ = [n for n in dir() if not n.startswith("_")]

"""Cycle-approximate simulator of a heterogeneous RISC-V SoC with an 8-core
bit-scalable SIMD cluster."""

__version__ = "0.1.0"

"""Host domain of the SoC: interconnect map, L2, IOTLB, HyperRAM, offload."""
from .memmap import (BEAT, HYPER_BASE, L2_BANKS, MemTransaction, l2_map, route,
                     route_txn)
from .iotlb import FAULT_VALUE, N_ENTRIES, Fault, Iotlb, IotlbEntry, Translated
from .hyperram import (HyperCompletion, HyperRamController, HyperRamDevice, HyperRamTiming,
                       HyperRamTopology, HyperRequest, bus_bytes, frontend_arbitrate,
                       hyper_map, hyper_transfer, hyper_unmap, peak_bandwidth_bps)
from .host import (HostAgent, OffloadCosts, OffloadRecord, Soc, SocConfig, SocPort,
                   amortized, binary_size, hyper_report, load_config)

__all__ = [n for n in dir() if not n.startswith("_")]

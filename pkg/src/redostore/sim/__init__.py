"""Simulation environment: virtual disk with crash injection, an independent
committed-state oracle, invariant checkers and a deterministic workload scheduler."""

from .disk import PAGE_SIZE, FaultPlan, RawDiskView, VirtualDisk

__all__ = ["PAGE_SIZE", "FaultPlan", "RawDiskView", "VirtualDisk"]

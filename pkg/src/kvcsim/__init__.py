"""Discrete-event simulator and policy library for KV-cache-constrained
LLM serving schedulers.

Subpackages are organized by concern:

- ``core``       domain types, microsecond clock, request lifecycle
- ``estimation`` output-length prediction and confidence-based padding
- ``kvc``        block-granular KV-cache pool with embedding and reserve
- ``scheduler``  per-iteration batch formation and KVC granting policies
- ``preemption`` victim ordering and swap/recompute strategy selection
- ``costmodel``  synthetic latency ground truth for iterations and preemptions
- ``workload``   trace generation, ingestion, and SLO assignment
- ``engine``     the simulation loop and metric extraction
- ``cli``        run / compare / sweep / fit / profile commands
"""

__version__ = "0.1.0"

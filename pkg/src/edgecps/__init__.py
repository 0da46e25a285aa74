"""Edge-enabled CPS testbed: hierarchy, addressing, QoS model, placement, simulated network and monitoring."""

from __future__ import annotations

__version__ = "0.1.0"

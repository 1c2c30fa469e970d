"""Committee-based secure aggregation for robust peer-to-peer learning."""

from .committee import CommitteePolicy, committee_size
from .estimator import FixedPointEncoder, SecureP2PClassifier
from .simulator import SimConfig, SimResult, run_simulation

__version__ = "0.1.0"

__all__ = [
    "CommitteePolicy",
    "FixedPointEncoder",
    "SecureP2PClassifier",
    "SimConfig",
    "SimResult",
    "committee_size",
    "run_simulation",
]

"""Deterministic simulator for a switched metropolitan QKD network.

Core pieces: fiber/switch topology with loss budgeting, the sifting ->
reconciliation -> privacy-amplification pipeline, tag authentication over
hash-based signatures with a PKI handshake, key-store scheduling, and the
log statistics behind the connection reports.
"""

__version__ = "0.1.0"

from .amplify import ToeplitzSeed, compression_ratio, privacy_amplify
from .kms import KeyStore, PairingSchedule, QueuePolicy, select_pairings
from .pipeline import (
    DeviceProfile,
    LogRecord,
    PairingProcess,
    QberPolicy,
    estimate_key_rate,
    qber_gate,
)
from .reconcile import winnow_reconcile
from .signature import generate_keypair, sign, verify
from .sm3 import sm3, sm3_hex
from .stats import (
    build_report,
    daily_series,
    mean_qber_with_threshold,
    mean_with_3sigma_elimination,
)
from .topology import (
    FeasibilityPolicy,
    Topology,
    load_topology,
    min_loss_route,
    path_loss,
)

__all__ = [
    "__version__",
    "ToeplitzSeed",
    "compression_ratio",
    "privacy_amplify",
    "KeyStore",
    "PairingSchedule",
    "QueuePolicy",
    "select_pairings",
    "DeviceProfile",
    "LogRecord",
    "PairingProcess",
    "QberPolicy",
    "estimate_key_rate",
    "qber_gate",
    "winnow_reconcile",
    "generate_keypair",
    "sign",
    "verify",
    "sm3",
    "sm3_hex",
    "build_report",
    "daily_series",
    "mean_qber_with_threshold",
    "mean_with_3sigma_elimination",
    "FeasibilityPolicy",
    "Topology",
    "load_topology",
    "min_loss_route",
    "path_loss",
]

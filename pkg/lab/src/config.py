"""
CylinderLab Configuration
==========================
Centralized configuration values loaded from environment variables.
"""

import os

ENGINE_VERSION: str = os.getenv("ENGINE_VERSION", "1")

LOG_LEVEL: str = os.getenv("LAB_LOG_LEVEL", "INFO").upper()
DEFAULT_OUTPUT_DIR: str = os.getenv("LAB_OUTPUT_DIR", "runs")
DEFAULT_SEED: int = int(os.getenv("LAB_DEFAULT_SEED", "0"))

# Integrand audits
AUDIT_TOL: float = float(os.getenv("LAB_AUDIT_TOL", "1e-9"))
AUDIT_SAMPLES: int = int(os.getenv("LAB_AUDIT_SAMPLES", "10000"))

# Order checks (pointwise bound, monotonicity in ell), relative to field scale
ORDER_TOL: float = float(os.getenv("LAB_ORDER_TOL", "1e-8"))

# Sweeps
SWEEP_WORKERS: int = int(os.getenv("LAB_SWEEP_WORKERS", "1"))
SANDWICH_TOL: float = float(os.getenv("LAB_SANDWICH_TOL", "1e-6"))
EXP_FIT_R2_THRESHOLD: float = float(os.getenv("LAB_EXP_FIT_R2", "0.98"))
POWER_FIT_SLACK: float = float(os.getenv("LAB_POWER_FIT_SLACK", "0.1"))

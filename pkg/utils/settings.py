import os

from dotenv import load_dotenv

load_dotenv()

VERSION = os.getenv("VERSION", "0.1.0")

# Scalar search over the truncated score interval [-SCORE_LIMIT, SCORE_LIMIT].
DEFAULT_TOL = float(os.getenv("RISKBOUND_TOL", "1e-8"))
SCORE_LIMIT = float(os.getenv("RISKBOUND_SCORE_LIMIT", "50"))
SCAN_POINTS = int(os.getenv("RISKBOUND_SCAN_POINTS", "2001"))
PSI_KNOTS = int(os.getenv("RISKBOUND_PSI_KNOTS", "4097"))

# Discretization slack is KAPPA * spacing * total mass.
KAPPA = float(os.getenv("RISKBOUND_KAPPA", "4"))

WORKERS = int(os.getenv("RISKBOUND_WORKERS", "4"))
BRUTE_FORCE_LIMIT = int(os.getenv("RISKBOUND_BRUTE_FORCE_LIMIT", "2000000"))

PORT = int(os.getenv("PORT", "8002"))

# Directory the HTTP service may read `table:` losses from; unset disables them there.
LOSS_TABLE_DIR = os.getenv("RISKBOUND_LOSS_TABLE_DIR")


def discretization_slack(spacing: float, total_mass: float, kappa: float | None = None) -> float:
    return (KAPPA if kappa is None else kappa) * spacing * total_mass

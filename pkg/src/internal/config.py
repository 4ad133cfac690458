import os

DATABASE_URL = os.getenv("TAILRISK_DATABASE_URL", "sqlite:///./tailrisk_results.db")
LOG_LEVEL = os.getenv("TAILRISK_LOG_LEVEL", "INFO")
SERVER_PORT = int(os.getenv("TAILRISK_SERVER_PORT", "8000"))

DEFAULT_THETAS = (0.05, 0.025, 0.01)
DEFAULT_N_BOOT = int(os.getenv("TAILRISK_N_BOOT", "10000"))
BOOT_CHUNK = 1000  # bootstrap replicates drawn per batch

DIVERGENCE_BOUND = 1e6  # |state| above this counts as a diverged filter
GAS_MAX_FACTOR = 50.0  # |k_t| above this overflows e^{k_t}
MIN_TRAIN_LENGTH = 50
MIN_MNF_VIOLATIONS = 5
DEFAULT_PENALTY_SCALE = 10.0  # lambda = scale / T_train when not configured
GAS_INSTABILITY_FACTOR = 10.0
TRADING_YEAR = 252  # observations per trading year

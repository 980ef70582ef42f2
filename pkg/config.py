import os
import logging
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Загружаем переменные окружения (только уровень логирования)
load_dotenv()

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

# Project
PROJECT_NAME = "Workflow Mesh Simulator"
VERSION = "1.0.0"

# Политики
METHODS = ("GET", "POST")  # набор M
DEFAULT_METHOD = "POST"
PATH_TEMPLATE = "/api/{agent}"
TIME_ZONE_LABEL = "Europe/Paris"  # только метаданные, час берётся из контекста
DEFAULT_PASSWORD = "pw"

# Симуляция
ENFORCEMENT_POINT = "source"  # source | destination | both
SIM_HOUR = 8  # в 8 часов выполнимы все временные окна PoC-политики
SIM_SEED = 0

# Стоимость старта контейнеров, секунды: (mean, sd).
# Без policy-sidecar сумма даёт ~5.93 +- 0.88, с ним ~7.87 +- 1.0 (+32.7%)
STARTUP_COSTS = {
    "scheduling": (0.90, 0.30),
    "service": (2.40, 0.50),
    "proxy": (2.63, 0.66),
    "policy_sidecar": (1.94, 0.49),
    "capture": (0.0, 0.0),
}

# Модель задержки запроса, секунды
LATENCY = {
    "intra_rtt": (0.0049, 0.0010),
    "inter_rtt": (0.0480, 0.0120),
    "sidecar_overhead": 0.0012,
    "per_rule": 0.0000075,
    "per_rule_sd": 0.0000018,
}

# Кластеры: один на актора, как в PoC
DEFAULT_REGION = "us-central1-f"
REGIONS = {
    "owner": "us-central1-f",
    "vfx": "us-central1-f",
    "color": "us-central1-f",
    "hdr": "us-west2-b",
    "sound": "us-west2-b",
}

# Identity
CA_NAME = "mesh-ca"
CERT_LIFETIME_TICKS = 1_000_000
BOOTSTRAP_TOKEN_BUDGET = 1
BOOTSTRAP_TOKEN_LIFETIME_TICKS = 1_000
JWT_AUDIENCE = "mesh-ca"
JWT_ALGORITHM = "HS256"
JWT_LIFETIME_TICKS = 10_000
SIGNATURE_SCHEME = "hmac"  # hmac | ed25519

# Orchestrator key-value store
KV_STORE_URL = "sqlite://"

# Bench
STARTUP_SAMPLES = 130  # на pod на уровень
REQUEST_SAMPLES = 40  # на разрешённую коммуникацию на уровень
BENCH_LEVELS = ("no-sidecar", "all-allow", "minimal", "+100", "+1000")
STARTUP_LEVELS = ("no-sidecar", "minimal")

# Stats
ALPHA = 0.05

if not isinstance(logging.getLevelName(LOG_LEVEL), int):
    logger.warning(f"Неизвестный LOG_LEVEL={LOG_LEVEL}, используем INFO")
    LOG_LEVEL = "INFO"

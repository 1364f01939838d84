"""Configuration constants, paths, defaults, and run-config loading."""

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_args

from .errors import ConfigError

# ---------------------------------------------------------------------------
# Load .env if present
# ---------------------------------------------------------------------------
BASE_DIR = Path(__file__).parent.parent
_env_path = BASE_DIR / ".env"
if _env_path.exists():
    for _line in _env_path.read_text().splitlines():
        _line = _line.strip()
        if _line and not _line.startswith("#") and "=" in _line:
            _k, _, _v = _line.partition("=")
            os.environ.setdefault(_k.strip(), _v.strip().strip("\"'"))

# ---------------------------------------------------------------------------
# Runtime environment
# ---------------------------------------------------------------------------
THREADS = max(1, int(os.environ.get("RFGN_THREADS", str(os.cpu_count() or 1))))
LOG_LEVEL = os.environ.get("RFGN_LOG_LEVEL", "INFO").upper()
OUTPUT_DIR = Path(os.environ.get("RFGN_OUTPUT_DIR", str(BASE_DIR / "runs")))

# BLAS pools read these once, when numpy is first imported.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, str(THREADS))

# ---------------------------------------------------------------------------
# Numerical defaults
# ---------------------------------------------------------------------------
DEFAULT_DIM = 128
DEFAULT_BETA = 0.1
DEFAULT_EPOCHS = 20
DEFAULT_BATCH_SIZE = 256
DEFAULT_GLOBAL_NEGATIVES = 1
DEFAULT_ADAGRAD_EPS = 1e-10
DEFAULT_PATIENCE = 5
DEFAULT_PARTIAL_NEGATIVES = 50

PROB_SUM_TOL = 1e-9
VERIFY_BOUND = 1e-9
INVERSE_SUFFIX = "_inv"

# ---------------------------------------------------------------------------
# Artifact layout
# ---------------------------------------------------------------------------
SNAPSHOT_MAGIC = b"RFGN"
SNAPSHOT_VERSION = 1
CACHE_FILE = "cache.bin"
PSI_FILE = "psi.bin"
FEATURES_FILE = "features.bin"
CONFIG_FILE = "config.json"
TRAIN_LOG_FILE = "train_log.csv"
METRICS_FILE = "metrics.json"
RESULTS_FILE = "results.csv"


def parse_layers(value) -> float:
    """Accept an int, "inf"/"infinity", or null (meaning never clear)."""
    if value is None:
        return math.inf
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "∞"):
            return math.inf
        try:
            value = int(value)
        except ValueError:
            raise ConfigError(f"layers must be a positive integer or 'inf', got {value!r}")
    if isinstance(value, float) and math.isinf(value):
        return math.inf
    if not isinstance(value, (int, float)):
        raise ConfigError(f"layers must be a non-negative integer or 'inf', got {value!r}")
    if isinstance(value, bool) or int(value) != value or value < 0:
        raise ConfigError(f"layers must be a non-negative integer or 'inf', got {value!r}")
    return int(value)


# ---------------------------------------------------------------------------
# Run config (flat JSON key set)
# ---------------------------------------------------------------------------

_PATH_KEYS = ("train", "valid", "test", "inductive_graph", "inductive_queries", "features")


def check_field_types(values: dict) -> None:
    """Each RunConfig value must match its annotation; ints are accepted where floats are."""
    annotations = {f.name: f.type for f in fields(RunConfig)}
    for key, value in values.items():
        if key == "layers" or key not in annotations:
            continue
        allowed = get_args(annotations[key]) or (annotations[key],)
        if value is None and type(None) in allowed:
            continue
        if isinstance(value, bool):
            ok = bool in allowed
        else:
            ok = isinstance(value, allowed) or (float in allowed and isinstance(value, int))
        if not ok:
            names = " or ".join(t.__name__ for t in allowed if t is not type(None))
            raise ConfigError(f"{key} must be {names}, got {value!r}")


@dataclass
class RunConfig:
    # data
    train: str = ""
    valid: str = ""
    test: str = ""
    inductive_graph: str = ""
    inductive_queries: str = ""
    features: str = ""
    fill_random: bool = False
    reciprocals: bool = True
    output: str = ""
    # model / training
    mode: str = "refactor"            # "refactor" or "pure_fm"
    score: str = "distmult"           # "distmult" or "complex"
    dim: int = DEFAULT_DIM
    beta: float = DEFAULT_BETA
    eta: float | None = None          # ψ learning rate, defaults to beta
    alpha: float | None = None        # explicit α, SGD only
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    negatives: int | None = None      # in-batch endpoint cap, None = all
    global_negatives: int = DEFAULT_GLOBAL_NEGATIVES
    layers: float = math.inf
    n3_lambda: float = 0.0
    optimizer: str = "adagrad"        # "sgd" or "adagrad"
    adagrad_eps: float = DEFAULT_ADAGRAD_EPS
    candidates: str = "full"          # "full" or "sampled"
    include_global_term: bool = True
    directions: str = "both"          # "both", "outgoing", "incoming"
    clear_unit: str = "pass"          # "pass" or "batch"
    patience: int = DEFAULT_PATIENCE
    seed: int = 0
    # evaluation
    protocol: str = "full"            # "full" or "partial"
    partial_negatives: int = DEFAULT_PARTIAL_NEGATIVES
    filtered: bool = True
    by_relation: bool = False
    source_path: str = field(default="", repr=False)

    def output_dir(self) -> Path:
        return Path(self.output) if self.output else OUTPUT_DIR

    def validate(self, require_data: bool = True) -> None:
        check_field_types(self.to_dict())
        choices = {
            "mode": ("refactor", "pure_fm"),
            "score": ("distmult", "complex"),
            "optimizer": ("sgd", "adagrad"),
            "candidates": ("full", "sampled"),
            "directions": ("both", "outgoing", "incoming"),
            "clear_unit": ("pass", "batch"),
            "protocol": ("full", "partial"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.score == "complex" and self.dim % 2:
            raise ConfigError(f"complex scoring needs an even dim, got {self.dim}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.beta < 0 or (self.eta is not None and self.eta < 0):
            raise ConfigError("learning rates must be non-negative")
        if self.n3_lambda < 0 or not math.isfinite(self.n3_lambda):
            raise ConfigError("n3_lambda must be finite and >= 0")
        if self.partial_negatives < 1:
            raise ConfigError("partial_negatives must be >= 1")
        self.layers = parse_layers(self.layers)
        if require_data:
            if not self.train:
                raise ConfigError("train path is required")
            for key in _PATH_KEYS:
                value = getattr(self, key)
                if value and not Path(value).exists():
                    raise ConfigError(f"{key} path does not exist: {value}")
            if bool(self.inductive_graph) != bool(self.inductive_queries):
                raise ConfigError("inductive_graph and inductive_queries must be given together")
            if self.inductive_graph and self.features:
                raise ConfigError("feature files cover the training vocabulary; inductive runs use random features")

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "source_path"}
        if isinstance(out["layers"], float) and math.isinf(out["layers"]):
            out["layers"] = "inf"
        return out


def load_run_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Read a flat JSON config, resolve relative paths, and apply CLI overrides."""
    data: dict = {}
    base = Path.cwd()
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ConfigError(f"Config {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        base = path.parent

    known = {f.name for f in fields(RunConfig)} - {"source_path"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
    check_field_types(data)

    for key in (*_PATH_KEYS, "output"):
        if data.get(key) and not Path(data[key]).is_absolute():
            data[key] = str(base / data[key])

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    check_field_types(data)

    cfg = RunConfig(**data, source_path=str(path or ""))
    cfg.layers = parse_layers(cfg.layers)
    return cfg

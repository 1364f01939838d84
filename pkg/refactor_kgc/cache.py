"""
Node-state cache: historical node states between layer applications.

States reset to the features X every L advances, which gives an effective
depth of L layers; L = inf never resets.
"""

import logging
import math
import struct
import threading
from pathlib import Path

import numpy as np

from .config import SNAPSHOT_MAGIC, SNAPSHOT_VERSION
from .errors import ArtifactError
from .models import CacheEvent, ClearUnit, NodeFeatures, NodeStates

logger = logging.getLogger(__name__)

_HEADER = struct.Struct("<4sIQQ")


class NodeStateCache:
    """
    Pull/push store over an |E| x K state matrix.

    One writer at a time; pushes to disjoint rows may come from several threads.
    """

    def __init__(self, initial: NodeFeatures, layer_budget: float = math.inf,
                 clear_unit: ClearUnit = ClearUnit.PASS):
        if not (math.isinf(layer_budget) or (int(layer_budget) == layer_budget and layer_budget >= 1)):
            raise ValueError(f"layer budget must be a positive integer or inf, got {layer_budget}")
        self.initial = initial
        self.layer_budget = layer_budget
        self.clear_unit = clear_unit
        self.states: NodeStates = np.array(initial.matrix, dtype=np.float64, copy=True)
        self.step = 0
        self._lock = threading.Lock()

    @property
    def n_entities(self) -> int:
        return int(self.states.shape[0])

    @property
    def dim(self) -> int:
        return int(self.states.shape[1])

    def _check_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_entities):
            raise IndexError(f"entity id out of range [0, {self.n_entities})")
        return ids

    def pull(self, ids) -> np.ndarray:
        ids = self._check_ids(ids)
        return self.states[ids].copy()

    def push(self, ids, rows) -> None:
        ids = self._check_ids(ids)
        if ids.size == 0:
            return
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape != (ids.size, self.dim):
            raise ValueError(f"push expects rows of shape ({ids.size}, {self.dim}), got {rows.shape}")
        if np.unique(ids).size != ids.size:
            raise ValueError("push ids must be unique within a call")
        if not np.all(np.isfinite(rows)):
            raise ValueError("push rows must be finite")
        with self._lock:
            self.states[ids] = rows

    def view(self) -> NodeStates:
        """Read-only view of the current states."""
        out = self.states.view()
        out.setflags(write=False)
        return out

    def snapshot(self) -> NodeStates:
        return self.states.copy()

    def restore(self, states: NodeStates, step: int | None = None) -> None:
        states = np.asarray(states, dtype=np.float64)
        if states.shape != self.states.shape:
            raise ValueError(f"restore expects shape {self.states.shape}, got {states.shape}")
        with self._lock:
            self.states[:] = states
            if step is not None:
                self.step = step

    def clear(self) -> None:
        with self._lock:
            self.states[:] = self.initial.matrix

    def advance_and_maybe_clear(self) -> CacheEvent:
        """Count one layer application; reset to X when the step hits a multiple of L."""
        self.step += 1
        if not math.isinf(self.layer_budget) and self.step % int(self.layer_budget) == 0:
            self.clear()
            logger.debug("cache cleared at step %d", self.step)
            return CacheEvent.CLEARED
        return CacheEvent.KEPT


# ---------------------------------------------------------------------------
# Snapshot codec
# ---------------------------------------------------------------------------

def write_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Magic, version, rows, cols, then row-major little-endian f64."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ValueError("snapshot matrices must be 2-D")
    rows, cols = matrix.shape
    Path(path).write_bytes(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, rows, cols) + matrix.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"snapshot not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ArtifactError(f"{path.name}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ArtifactError(f"{path.name}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ArtifactError(f"{path.name}: unsupported snapshot version {version}")
    payload = data[_HEADER.size:]
    if len(payload) != rows * cols * 8:
        raise ArtifactError(f"{path.name}: expected {rows * cols * 8} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)

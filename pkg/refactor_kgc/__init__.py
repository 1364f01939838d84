"""ReFactor knowledge-graph completion: factorisation models trained as message passing."""

from . import config  # noqa: F401  (sets thread caps before numpy loads)

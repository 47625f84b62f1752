"""Cross-modal retrieval with per-modality classifiers and translator networks."""

try:
    from ._dstc import *  # noqa: F401,F403  (installed package layout)
except ImportError:
    from _dstc import *  # noqa: F401,F403  (in-tree build layout)

__version__ = "0.1.0"

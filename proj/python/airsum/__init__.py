"""Learned digital over-the-air aggregation: Python bindings."""

try:
    from airsum._core import *  # noqa: F401,F403
    from airsum._core import Decoder, QuantCodebook, UraCodebook  # noqa: F401
except ImportError:  # cmake build tree: the extension sits on sys.path directly
    from _core import *  # noqa: F401,F403
    from _core import Decoder, QuantCodebook, UraCodebook  # noqa: F401

__version__ = "0.1.0"

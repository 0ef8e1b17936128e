"""Cooperative flow-based alignment of multiple distributions.

The heavy lifting lives in the compiled `_aub` extension; this package just
re-exports its surface.
"""

try:
    from aub._aub import *  # noqa: F401,F403  (installed layout)
    from aub._aub import __doc__ as _impl_doc
except ImportError:  # in-tree builds put _aub on PYTHONPATH directly
    from _aub import *  # noqa: F401,F403
    from _aub import __doc__ as _impl_doc

__version__ = "0.1.0"
__doc__ = (__doc__ or "") + "\n\n" + (_impl_doc or "")

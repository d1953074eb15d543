"""Select the convolution kernels at import time.

The compiled Cython kernels are used when the extension was built; otherwise
the numpy kernels in ``_conv_fallback`` take over.  Set ``NEURALGPU_BACKEND``
to ``fallback`` to force the numpy path.
"""

import os

from . import _conv_fallback as fallback

try:
    from . import _conv_kernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("NEURALGPU_BACKEND", "compiled") != "fallback":
    kernels = compiled
    BACKEND = "compiled"
else:
    kernels = fallback
    BACKEND = "fallback"

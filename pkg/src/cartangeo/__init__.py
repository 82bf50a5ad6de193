"""Geometric control on Cartan distributions.

Exact polynomial frames and brackets, control systems and their quotients,
derived flags, normal and abnormal extremals, the Cartan prolongation with
its leaf space, and sub-Riemannian problems on the resulting
pseudo-product structure.
"""

from . import cartan, control, extremals, flags, models, srmetric, vecfield
from .cartan import *  # noqa: F401,F403
from .control import *  # noqa: F401,F403
from .extremals import *  # noqa: F401,F403
from .flags import *  # noqa: F401,F403
from .srmetric import *  # noqa: F401,F403
from .vecfield import *  # noqa: F401,F403

__version__ = "0.1.0"

__all__ = (["cartan", "control", "extremals", "flags", "models", "srmetric", "vecfield"]
           + vecfield.__all__ + control.__all__ + flags.__all__ + extremals.__all__
           + cartan.__all__ + srmetric.__all__)

"""Simulated vision-guided pick-and-place workcell for mosquito head removal.

Modules: :mod:`scene` and :mod:`render` (synthetic workcell), :mod:`vision`
and :mod:`localizer` (overhead pipeline), :mod:`segmentation` (onboard
labels and metrics), :mod:`calibration`, :mod:`robot`, :mod:`controller`,
:mod:`metrics`, :mod:`config` and :mod:`cli`.
"""
from .errors import MosquitoPnPError

__version__ = "0.1.0"
__all__ = ["MosquitoPnPError", "__version__"]

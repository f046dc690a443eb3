"""
blitz-eval: spatio-temporal evaluation of place-based police interventions

Builds hexagonal cell x day x period panels from crime and blitz records,
fits fixed-effects Poisson/linear models with spatial and temporal lags,
and turns the estimates into effect sizes and cost-benefit summaries.

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

from blitz_eval.version import VERSION, __version__

__all__ = ["VERSION", "__version__"]

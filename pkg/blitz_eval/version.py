"""
Version information for blitz-eval

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

# Single source of truth for version
__version__ = "0.2.0"

# Version tuple for comparisons
VERSION = tuple(map(int, __version__.split(".")))

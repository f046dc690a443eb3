"""
blitz-eval MCP Server Package

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

from blitz_eval.server.app import main, run

__all__ = ["main", "run"]

"""
Allow ``python -m blitz_eval``

Copyright (C) 2025 Dynamic Devices Ltd
License: GPL-3.0-or-later
"""

import sys

from blitz_eval.cli import main

if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3

"""An entry point for the irnewton benchmark harness."""

import sys

from irnewton.main import main

sys.exit(main())

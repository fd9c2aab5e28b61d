#!/usr/bin/env python3

import sys

from force_aggregator.cli import main

if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Main entry point for the RNN data-assimilation lab.
This script provides the command-line interface for generating data,
training networks and running assimilation experiments.
"""

import sys
import subprocess

if __name__ == '__main__':
    # Run the main module to avoid import issues
    result = subprocess.run([sys.executable, "-m", "src.main"] + sys.argv[1:])
    sys.exit(result.returncode)

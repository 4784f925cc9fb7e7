#!/usr/bin/env python
"""Command-line entry point: python mdcn.py <train|sr|eval|inspect|serve> [options]"""
import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())

"""
Main entry point for the EV taxi fleet simulator.
"""
import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Mimic Explorer - Entry point
"""

import sys
import os

# Add src directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from mimic.app import main

if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Non-Rigid Keypoint Detection - Main Entry Point

Usage:
    python nrkd.py synth data/train --count 50
    python nrkd.py build-gt data/train
    python nrkd.py train data/train runs/exp1 --max-steps 500
    python nrkd.py detect image.png runs/exp1/detect --weights runs/exp1/weights.nrkw
    python nrkd.py eval data/eval runs/exp1/eval --weights runs/exp1/weights.nrkw
    python nrkd.py retrieve data/ret/gallery data/ret/query runs/ret --detector plugin
"""

import sys
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main


if __name__ == '__main__':
    sys.exit(main())

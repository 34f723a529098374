# repository root on sys.path so `app` and `core` import from a plain checkout
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

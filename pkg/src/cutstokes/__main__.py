"""Module entry point: ``python -m cutstokes``."""
import sys

from .cli import main

sys.exit(main())

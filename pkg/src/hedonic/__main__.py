"""Allow ``python -m hedonic``."""

import sys

from .cli import main

sys.exit(main())

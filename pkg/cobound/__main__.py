import sys

from cobound.cli import main

sys.exit(main())

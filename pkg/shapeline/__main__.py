import sys

from shapeline.cli import main

sys.exit(main())

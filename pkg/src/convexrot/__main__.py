import sys

from convexrot.cli import main

sys.exit(main())

import sys

from snk.cli import main

sys.exit(main())

import sys

from spatialfl.cli import main

sys.exit(main())

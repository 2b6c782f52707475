import sys

from segshuffle.cli import main

sys.exit(main())

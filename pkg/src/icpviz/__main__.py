import sys

from icpviz.cli import main

sys.exit(main())

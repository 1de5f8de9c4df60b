import sys

from lqlab.cli import main

sys.exit(main())

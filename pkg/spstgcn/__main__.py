import sys

from spstgcn.cli import main

sys.exit(main())

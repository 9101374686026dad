import sys

from fragsolv.cli import main

sys.exit(main())

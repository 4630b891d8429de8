import sys

from crodobo.cli import main

sys.exit(main())

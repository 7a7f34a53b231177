import sys

from modrl.cli import main

sys.exit(main())

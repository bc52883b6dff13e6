import sys

from twoscale.cli import main

sys.exit(main())

import sys

from attnmil.cli import main

sys.exit(main())

import sys

from headradar.cli import main

sys.exit(main())

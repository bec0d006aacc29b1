import sys

from rxai.cli import main

sys.exit(main())

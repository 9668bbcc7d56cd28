import sys

from assoftmax.cli import main

sys.exit(main())

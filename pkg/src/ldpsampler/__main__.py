import sys

from ldpsampler.cli import main

sys.exit(main())

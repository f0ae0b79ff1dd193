import sys

from fsdlab.main import main

sys.exit(main())

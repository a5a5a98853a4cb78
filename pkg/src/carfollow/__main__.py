import sys

from carfollow.cli import main

sys.exit(main())

import sys

from nosqlkit.cli import main

sys.exit(main())

import sys

from oppspec.main import main


sys.exit(main())

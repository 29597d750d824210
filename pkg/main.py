import sys

from p3o.cli import main

if __name__ == "__main__":
    sys.exit(main())

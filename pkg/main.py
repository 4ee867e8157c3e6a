import sys

from tsae_tool.cli import main

if __name__ == "__main__":
    sys.exit(main())

import sys

import stdf_lab

if __name__ == "__main__":
    sys.exit(stdf_lab.main())

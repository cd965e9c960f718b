import sys

from mletpf.harness.cli import main

sys.exit(main())

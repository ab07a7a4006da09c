import sys

from stepsim.main import main

sys.exit(main())

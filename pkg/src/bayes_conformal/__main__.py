import sys

from bayes_conformal.harness.cli import main

sys.exit(main())

import sys

from growthpatterns.cli import main

sys.exit(main())

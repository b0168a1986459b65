"""Entry point for ``python -m healthfusion``."""
from healthfusion.cli import main

main()

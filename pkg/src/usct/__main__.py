"""Allow ``python -m usct`` as an alternative to the console script."""
from .cli import main

main()

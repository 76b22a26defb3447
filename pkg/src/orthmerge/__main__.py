"""Allow ``python -m orthmerge ...`` as an alias for the console script."""

from .cli import entrypoint

entrypoint()

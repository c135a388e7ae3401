"""Module entry point: python -m spikewalk."""

from spikewalk.cli import console_main

console_main()

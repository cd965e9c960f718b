"""Experiment drivers, result I/O and the command line entry point."""

"""Experiment harness: configuration, sweeps, probes and the command line."""

"""Command line, ingestion, configuration and experiment sweeps."""

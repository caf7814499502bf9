"""Fair classification and auditing with locally private protected attributes."""

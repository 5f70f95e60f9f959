"""Super-Brownian motion in a random environment: simulation and verification lab."""

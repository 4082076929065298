"""Hedonic real-estate pricing with P-spline GAMs and polynomial GLMs."""

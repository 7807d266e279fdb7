"""
Opportunistic spectrum access toolkit: dwell-time fitting, energy detection,
link budget, sensing-interval optimization and Monte Carlo validation.
"""

__version__ = "0.1.0"

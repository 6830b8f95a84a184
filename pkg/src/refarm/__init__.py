"""Planning and evaluation toolkit for refarming GSM spectrum to LTE small cells.

Analytical (stochastic-geometry) LTE rates and GSM outage probabilities, a
hexagonal-grid / PPP Monte Carlo simulator that checks them, and deployment
planning (carrier grid, punctured PRBs, small-cell power calibration).
"""

__version__ = "0.1.0"

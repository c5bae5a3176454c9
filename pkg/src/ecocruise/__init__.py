"""Fuel-aware cruise control with a self-tuning predictive controller.

The package covers the full workflow: longitudinal vehicle and fuel models,
road-profile handling, a global minimum-fuel optimizer, recovery of the
controller cost weight that reproduces that optimum, a learned predictor for
the weight, and a closed-loop harness comparing all controllers.
"""

__version__ = "0.1.0"

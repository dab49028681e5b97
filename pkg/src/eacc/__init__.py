"""Energy-saving adaptive cruise control lab.

Synthetic traffic, physics and recurrent speed predictors, an energy-optimal
MPC follower and the evaluation harness around them.
"""

__version__ = "0.1.0"

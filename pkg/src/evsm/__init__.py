"""Egocentric visual self-modeling for a desk-scale legged robot.

A robot learns to predict its own next-step pose change from first-person
ground images plus a motor command, then uses the predictor for sampling-based
locomotion control, anomaly detection, and damage recovery.  A closed-form
stance-stroke simulator doubles as environment and verification oracle.
"""

__version__ = "0.1.0"

"""Numerical controllability to trajectories for the one-phase Stefan problem."""

"""Behaviour metrics over finished runs: KL, Pareto fronts, run spread, shift histograms."""

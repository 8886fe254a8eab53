"""Bistatic mmWave radio SLAM library.

Random-finite-set SLAM filters (Rao-Blackwellized GM-PHD and PMBM), a
belief-propagation SLAM variant, a seeded channel-parameter simulator and
GOSPA/RMSE evaluation, all over a fully synthetic single-BS scenario.
"""

__version__ = "0.1.0"

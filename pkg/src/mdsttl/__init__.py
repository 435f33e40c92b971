"""Distributed MDS-coded soft-TTL caching: simulator and DDPG learners."""

__version__ = "0.1.0"

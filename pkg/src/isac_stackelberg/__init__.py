"""Secure ISAC UAV Stackelberg game: follower beamforming by SCA, leader
trajectory by double deep Q-learning."""

__version__ = "0.1.0"

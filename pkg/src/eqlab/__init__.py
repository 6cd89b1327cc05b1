"""Equilibration of isolated quantum wave packets in chaotic billiards and the
Henon-Heiles potential, with their classical counterparts."""

__version__ = "0.1.0"

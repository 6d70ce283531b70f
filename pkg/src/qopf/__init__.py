"""Doubly variational quantum solver for AC optimal power flow."""

__version__ = "0.1.0"

"""Controllable low-light enhancement with an HVI color pipeline and a Bi-WKV backbone."""

__version__ = "0.1.0"

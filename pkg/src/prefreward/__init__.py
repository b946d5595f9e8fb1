"""Preference-based reward learning from trajectory quality scores, with offline RL and evaluation tooling."""
__version__ = "0.1.0"

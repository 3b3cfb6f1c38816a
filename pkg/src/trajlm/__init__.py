"""Trajectory-language toolkit.

Encodes daily movement (locations + variable time intervals + conditioning
tokens) as character sequences, trains a small autoregressive transformer
from scratch on them, and evaluates it against Markov-chain and AR baselines.
"""

__version__ = "0.1.0"

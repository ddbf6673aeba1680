"""Conversational recommender: soft preference estimation + graph-state DQN policy."""

__version__ = "0.1.0"

"""Seamless multilevel ensemble transform particle filter."""

"""Ensemble prediction variation and its estimation from neuron activation strength."""

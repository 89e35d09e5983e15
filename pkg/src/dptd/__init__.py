"""Differentially private temporal-difference learning with momentum SGDA."""

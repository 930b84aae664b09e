"""Desk-scale tabletop manipulation sandbox (build in progress)."""

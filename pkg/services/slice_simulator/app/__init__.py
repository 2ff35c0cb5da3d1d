"""Sliceguard slice simulator package."""

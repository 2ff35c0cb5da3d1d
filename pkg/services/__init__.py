"""Service packages for Sliceguard."""

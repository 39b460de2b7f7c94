"""Quasistatic frictionless contact of a viscoelastic body with a rigid-plastic foundation."""

"""Gap-acceptance automated lane change for trucks, with style identification."""

__version__ = "0.1.0"

"""Energy-harvesting small-cell downlink: stochastic game, Stackelberg baseline and mean-field game."""

__version__ = "0.1.0"

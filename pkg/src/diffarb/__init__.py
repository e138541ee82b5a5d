"""diffarb: no-arbitrage classification for one-dimensional general diffusion
markets, with a Monte Carlo chain engine for empirical cross-validation."""

__version__ = "0.1.0"

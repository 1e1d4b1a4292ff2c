"""Channel prediction benchmark toolkit.

Synthesizes time-varying multipath MISO-OFDM channel datasets, implements
a frozen-backbone transformer channel predictor plus classical and neural
baselines, and evaluates NMSE, spectral efficiency, and BER across
velocity, noise, few-shot, and cross-scenario regimes.
"""

__version__ = "0.1.0"

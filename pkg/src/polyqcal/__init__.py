"""polyqcal: calibration toolkit for stochastic reaction networks.

Forward-simulates a reaction network exactly, emulates empirical-logit
outputs with Gaussian processes, narrows the input space by wave-based
history matching, and calibrates the uncertain log-rates by MCMC over
the emulated likelihood.
"""

__version__ = "0.1.0"

"""TDOA and cooperative localization with the two-stage weighted projection method.

Submodules:

* ``geometry``: anchor sets, measurement Jacobians, dilution of precision
* ``channel``: link budget and CDL-A channel taps
* ``crlb``: TOA Cramér-Rao bounds and the position FIM chain
* ``measurements``: NLOS bias model and synthetic measurements
* ``solvers``: TS-WPM (single and cooperative), WNLS, NLS, IPPM
* ``analysis``: closed-form covariance and MSE predictions
* ``simharness``: Monte Carlo harness and CLI
"""

__version__ = "0.1.0"

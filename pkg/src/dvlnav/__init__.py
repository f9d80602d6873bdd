"""Strapdown navigation aided by a Doppler velocity log.

Modules
-------
geo
    Earth model: radii of curvature, earth rate, normal gravity.
attmath
    Rotation utilities for the YZX Euler convention.
strapdown
    Mechanization in the north-up-east navigation frame.
simkit
    Motion plans, truth synthesis and sensor error models.
iodvlc
    In-motion DVL scale factor and misalignment calibration.
obscheck
    Motion classification and observability checks.
ekf
    19-state error-state filter for SINS/DVL integration.
"""

__version__ = "0.1.0"

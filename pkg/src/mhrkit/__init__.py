"""Small-sample regression toolkit for micro hemispherical resonator design.

Predicts modal frequencies and the post-fabrication anchor radius of
glassblown resonators from three geometric parameters, using an
attention/LSTM hybrid trained on a few hundred samples, and screens
full-factorial design grids against manufacturability thresholds.
"""

__version__ = "0.1.0"

"""Quantitative thermo-acoustic tomography toolkit.

Simulates time-harmonic Maxwell radiation on a structured grid, synthesizes
internal absorption data H = sigma |E|^2, verifies ellipticity and
boundary-covering conditions of the linearized inverse problem numerically,
constructs plane-wave and complex-frequency illuminations, and reconstructs
the coefficient pair (n, sigma) through the linearized normal operator.
"""

from .version import SCHEMA_VERSION, __version__  # noqa: F401
from .medium import (  # noqa: F401
    DerivedFields,
    Grid,
    Medium,
    derived_fields,
    eval_q,
    make_phantom,
)

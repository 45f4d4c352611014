"""Inner-autoencoder fault detection for dynamic systems.

Analytic orthogonal-projection detectors for LTI plants, inner-system checks
for affine nonlinear image representations, a recurrent autoencoder trained
with idempotency/latent-consistency regularizers, and a three-tank benchmark
to exercise all of it.
"""

__version__ = "0.1.0"

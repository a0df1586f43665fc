"""Coherent one-way QKD post-processing engine with a simulated optical link.

Subpackages mirror the distillation pipeline: `cowsim` (stochastic channel
and detectors), `sifting` (detection-time disclosure), `ldpc` (syndrome
reconciliation), `verification` (post-correction hashing and exact error
estimation), `privamp` (Toeplitz extraction), `auth` (one-time-padded
polynomial MACs), `finitekey` (secret-fraction calculus), `engine`
(two-party sessions and key management) and `cli`.
"""

from . import auth, bitops, cowsim, engine, finitekey, ldpc, presets, privamp, randomness, sifting, verification

__version__ = "0.1.0"

__all__ = [
    "auth", "bitops", "cowsim", "engine", "finitekey", "ldpc", "presets",
    "privamp", "randomness", "sifting", "verification", "__version__",
]

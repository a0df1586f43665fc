"""Measured frame-failure rates of the shipped decoder, with interpolation.

The table below was produced by `python -m cowkd.ldpc.fer` on this
implementation (hardware profile, ten iterations) over a binary symmetric
channel and is consumed by the parameter optimizer to predict
verification-drop rates. Regenerate after any decoder change.
"""

from __future__ import annotations

import json
import math

import numpy as np

from ..randomness import EntropySeed, new_stream
from .codec import decode_batch, syndrome_batch
from .matrices import BLOCK_LENGTH, as_rate

# crossover probability -> measured frame failure rate, per code rate
# (hardware profile, 4096 blocks per point, seed 2024)
FER_TABLE = {
    "1/2": [[0.02, 0.00024], [0.04, 0.00049], [0.06, 0.02344], [0.07, 0.23047],
            [0.08, 0.74146], [0.09, 0.98242], [0.1, 1.0]],
    "2/3": [[0.01, 0.0], [0.02, 0.0], [0.03, 0.01367], [0.04, 0.50195],
            [0.05, 0.9707], [0.06, 1.0]],
    "3/4": [[0.005, 0.0], [0.01, 0.0], [0.015, 0.00024], [0.0191, 0.02637],
            [0.025, 0.36987], [0.03, 0.81567], [0.04, 0.99854]],
    "5/6": [[0.002, 0.0], [0.005, 0.00073], [0.0075, 0.00635], [0.01, 0.06787],
            [0.015, 0.57886], [0.02, 0.94971]],
}


def fer_estimate(rate, qber: float) -> float:
    """Interpolated frame failure probability at a given error rate."""
    key = f"{as_rate(rate).numerator}/{as_rate(rate).denominator}"
    pts = FER_TABLE[key]
    xs = [p for p, _ in pts]
    ys = [f for _, f in pts]
    if qber <= xs[0]:
        return ys[0]
    if qber >= xs[-1]:
        return ys[-1]
    # linear in log(fer) where both endpoints are nonzero, else linear
    i = int(np.searchsorted(xs, qber)) - 1
    x0, x1, y0, y1 = xs[i], xs[i + 1], ys[i], ys[i + 1]
    w = (qber - x0) / (x1 - x0)
    if y0 > 0.0 and y1 > 0.0:
        return math.exp((1 - w) * math.log(y0) + w * math.log(y1))
    return (1 - w) * y0 + w * y1


def measure_point(rate, crossover: float, n_blocks: int, seed: int = 2024,
                  batch: int = 512, profile: str = None) -> float:
    """Monte-Carlo frame failure rate on a BSC at the given crossover."""
    from .codec import DEFAULT_PROFILE

    profile = profile or DEFAULT_PROFILE
    rng = new_stream(EntropySeed.from_int(seed))
    failures = 0
    done = 0
    while done < n_blocks:
        b = min(batch, n_blocks - done)
        true = rng.draw_bits(b * BLOCK_LENGTH).reshape(b, BLOCK_LENGTH)
        synd = syndrome_batch(true, rate)
        flips = (rng.draw_uniform(b * BLOCK_LENGTH).reshape(b, BLOCK_LENGTH)
                 < crossover).astype(np.uint8)
        _, ok, _ = decode_batch(true ^ flips, synd, rate, channel_p=crossover,
                                profile=profile)
        failures += int(b - ok.sum())
        done += b
    return failures / n_blocks


def measure_table(n_blocks: int = 4096) -> dict:
    table = {}
    for key, pts in FER_TABLE.items():
        table[key] = [[p, measure_point(key, p, n_blocks)] for p, _ in pts]
    return table


if __name__ == "__main__":
    print(json.dumps(measure_table(), indent=2))

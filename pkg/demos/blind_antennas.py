"""How many receive antennas does blind aggregation need?

Devices send their raw models with no channel knowledge; the server combines
the antennas with the conjugate of the summed channel. The aggregation error
falls roughly as 1/sqrt(M), so each 4x increase in antennas halves it.

    python demos/blind_antennas.py
"""

import numpy as np

from airfl.channel import CsiKind, NoiseConfig, draw_rayleigh, draw_round_noise, make_view
from airfl.numerics import RngStream
from airfl.schemes import AggregationInput, fully_blind_aggregate, min_antennas_bound


def mean_error(W, M, trials=100, P=10.0):
    errs = []
    for i in range(trials):
        ch = draw_rayleigh(RngStream(1, (M, i)), W.shape[0], M)
        noise = draw_round_noise(RngStream(2, (M, i)), W.shape[1], M, NoiseConfig(1.0))
        inp = AggregationInput(W, ch, make_view(CsiKind.CSIR_ONLY, ch), noise, P)
        errs.append(np.linalg.norm(fully_blind_aggregate(inp).global_model - W.mean(axis=0)))
    return float(np.mean(errs))


def main():
    W = RngStream(0).generator().normal(0.0, 1.0, (10, 32))
    previous = None
    for M in (16, 64, 256, 1024, 4096):
        err = mean_error(W, M)
        ratio = "" if previous is None else f"  (x{previous / err:.2f} smaller)"
        print(f"M = {M:5d}: mean error {err:.4f}{ratio}")
        previous = err
    print("\nantennas guaranteeing error <= 1/K with probability 0.9 for K = 10:",
          min_antennas_bound(1.0, 0.1, 10, 1.0, 1.0, 1.0))


if __name__ == "__main__":
    main()

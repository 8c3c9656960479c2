"""The WAFeL weight trade-off for a single round.

Tightening the MSE budget theta pulls the aggregation weights away from the
uniform vector (which is best for the learning-side variance term) towards
the devices that the shared equalizer can align well.

    python demos/wafel_weights.py
"""

import math

import numpy as np

from airfl.channel import draw_rayleigh, make_partial_phase_view
from airfl.numerics import RngStream
from airfl.optim import WeightProblem, min_quadratic_over_simplex, solve_weight_selection
from airfl.schemes import stacked_channel, wafel_mse_matrix


def main(K=8, P=10.0):
    ch = draw_rayleigh(RngStream(3), K, 1)
    view = make_partial_phase_view(RngStream(4), ch, math.pi / 4)
    H = stacked_channel(view.server_effective_channels())
    sigma = RngStream(5).generator().uniform(0.5, 2.0, K)
    Q = wafel_mse_matrix(sigma, H, P, 1.0)
    uniform = np.full(K, 1.0 / K)
    floor = min_quadratic_over_simplex(Q)[1]
    print(f"per-entry MSE: uniform weights {uniform @ Q @ uniform:.4f}, best achievable {floor:.4f}")
    for frac in (1.0, 0.5, 0.2, 0.05):
        theta = floor + frac * (uniform @ Q @ uniform - floor)
        sol = solve_weight_selection(WeightProblem(Q, np.ones(K), theta))
        print(f"theta {theta:.4f} [{sol.status:6s}] ||alpha||^2 = {sol.alpha @ sol.alpha:.4f}  "
              f"alpha = {np.array2string(sol.alpha, precision=3, suppress_small=True)}")


if __name__ == "__main__":
    main()

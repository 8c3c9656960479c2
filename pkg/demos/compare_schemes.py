"""Paired comparison of the aggregation schemes on a small synthetic task.

Every scheme trains from the same initial model, on the same data, with the
same channel, noise and mini-batch draws, so the accuracy gaps below come
from the aggregation step alone.

    python demos/compare_schemes.py
"""

import numpy as np

from airfl.learning import LinkConfig, TrainingConfig, generate_synthetic_task, run_federated_training
from airfl.numerics import RngStream
from airfl.schemes import (GlobalCsitConfig, IdealConfig, LocalCsitConfig, PartialPhaseConfig,
                           WafelConfig)

SCHEMES = {
    "ideal orthogonal": IdealConfig(),
    "WAFeL": WafelConfig(),
    "local CSIT (BAA)": LocalCsitConfig(),
    "global CSIT, M=2": GlobalCsitConfig(M=2),
    "partial-phase blind": PartialPhaseConfig(),
}


def main(repetitions=3, T=60):
    cfg = TrainingConfig(mu=0.1, tau=3, T=T, B=16)
    link = LinkConfig.from_snr(10.0)
    final = {name: [] for name in SCHEMES}
    for rep in range(repetitions):
        rng = RngStream(42).substream(rep)
        task = generate_synthetic_task(rng.substream(0), K=30, separation=0.5)
        for name, scheme in SCHEMES.items():
            run = run_federated_training(task, scheme, cfg, rng.substream(1), link)
            final[name].append(run.records[-1].accuracy)
            mean_err = np.mean([r.agg_error for r in run.records])
            print(f"rep {rep}  {name:<22s} accuracy {run.records[-1].accuracy:.3f}  "
                  f"mean aggregation error {mean_err:.3g}")
    print("\nmean final accuracy")
    for name, accs in final.items():
        print(f"  {name:<22s} {np.mean(accs):.4f}")


if __name__ == "__main__":
    main()

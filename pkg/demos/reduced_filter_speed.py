"""How much time does the reduced-dimension update save?

With k one-bit ADCs per measurement feature the stacked observation has
n = k * p entries, and the full Bussgang update inverts an n x n matrix every
step.  The reduced variant first averages each feature's ADC bank down to a
single entry, so its update works in p dimensions regardless of k -- and when
every ADC in a bank shares the same noise statistics the averaging loses no
information, so the estimates are identical.

This script times both variants on the same data for growing ADC counts and
prints the speedup alongside the (matching) accuracy.

Run:  python demos/reduced_filter_speed.py
"""

import numpy as np

from bussgangkf import (
    AdcBank,
    LorenzParams,
    NoiseSpec,
    generate_lorenz_dataset,
    lorenz_model,
    stack_measurements,
)
from bussgangkf.bench import _time_variant, evaluate_filter


def main():
    noise = NoiseSpec(r2_db=-10.0, snr_db=-20.0)
    base = lorenz_model(
        LorenzParams(), q2=noise.q2, r2=10 ** (noise.r2_db / 10)
    )

    print(f"{'ADCs/feature':>12} {'bkf MSE':>9} {'rbkf MSE':>9} "
          f"{'bkf s':>7} {'rbkf s':>7} {'speedup':>8}")
    for k in (1, 8, 32, 128):
        dataset = generate_lorenz_dataset(
            count=3, length=500, noise=noise, adc_per_feature=k,
            master_seed=11,
        )
        r_vars = np.full(3 * k, 10 ** (noise.r2_db / 10))
        bank = AdcBank(adc_per_feature=k, noise_variances=r_vars)
        model = stack_measurements(base, bank)
        mse_b, _ = evaluate_filter(model, dataset, "bkf", adc_per_feature=k)
        mse_r, _ = evaluate_filter(model, dataset, "rbkf", adc_per_feature=k)
        t_b = _time_variant(model, dataset, "bkf", k, 0, repeats=3)
        t_r = _time_variant(model, dataset, "rbkf", k, 0, repeats=3)
        print(f"{k:>12} {mse_b:>9.2f} {mse_r:>9.2f} "
              f"{t_b:>7.2f} {t_r:>7.2f} {t_b / t_r:>7.1f}x")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Latency comparison of the localization paths on the full-size problem.

Times, per single localization on the M=306 / P=15,002 grid:

  * RAP-MUSIC (the classical scanning baseline),
  * the float64 reference forward pass (training numerics), and
  * the float32 serving engine (deployment path used by the CLI and the
    evaluation harness).

Usage: python benchmarks/serving_benchmark.py [--points 15002] [--repeats 25]
"""

import argparse
import statistics
import time

import numpy as np

import megloc


def median_ms(fn, inputs, warmup=3):
    for y in inputs[:warmup]:
        fn(y)
    samples = []
    for y in inputs:
        started = time.perf_counter()
        fn(y)
        samples.append((time.perf_counter() - started) * 1e3)
    return statistics.median(samples)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--points", type=int, default=15_002)
    parser.add_argument("--sensors", type=int, default=306)
    parser.add_argument("--repeats", type=int, default=25)
    args = parser.parse_args()

    print(f"building geometry: M={args.sensors}, P={args.points}")
    sensors = megloc.build_sensor_helmet(args.sensors, 0.12)
    space = megloc.build_synthetic_source_space(args.points, 0.08, seed=1)
    lead_field = megloc.compute_lead_field(sensors, space)

    recordings = {}
    for n_samples in (1, 16):
        recordings[n_samples] = [
            megloc.draw_example(
                lead_field, 1, 0.0, "random", n_samples, 1.0,
                megloc.derive_seed(12, n_samples, r),
            )[0]
            for r in range(args.repeats)
        ]

    print(f"\n{'row':<28}{'median ms':>12}")
    rap_by_n = {}
    for n_samples in (1, 16):
        for q in (1, 2, 3):
            ms = median_ms(
                lambda y: megloc.rap_music_localize(y, lead_field, q), recordings[n_samples]
            )
            rap_by_n[(q, n_samples)] = ms
            print(f"{f'rap_music q={q} n={n_samples}':<28}{ms:>12.2f}")

    for n_samples, builder in ((1, "mlp"), (16, "cnn")):
        for q in (1, 2, 3):
            if builder == "mlp":
                model = megloc.build_mlp(args.sensors, q, seed=q)
            else:
                model = megloc.build_cnn(args.sensors, n_samples, q, seed=q)
            engine = megloc.ServingEngine(model)
            ref_ms = median_ms(
                lambda y: megloc.predict_locations(model, y), recordings[n_samples]
            )
            srv_ms = median_ms(lambda y: engine.predict_locations(y), recordings[n_samples])
            rap_ms = rap_by_n[(q, n_samples)]
            print(
                f"{f'{builder}-{q} float64 reference':<28}{ref_ms:>12.3f}"
                f"   ({rap_ms / ref_ms:5.0f}x vs rap)"
            )
            print(
                f"{f'{builder}-{q} float32 serving':<28}{srv_ms:>12.3f}"
                f"   ({rap_ms / srv_ms:5.0f}x vs rap)"
            )


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Writes a seeded synthetic hourly spot-price file for a full year.

The log price is a seasonal mean (annual, weekly and daily patterns) plus
an hourly mean-reverting residual, so the file exercises calibrate end to end.
"""
import argparse
import csv
import math
import random
from datetime import datetime, timedelta


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--year", type=int, default=2016)
    parser.add_argument("--seed", type=int, default=2016)
    parser.add_argument("--a", type=float, default=0.05, help="hourly mean reversion")
    parser.add_argument("--sigma", type=float, default=0.06, help="hourly innovation sd")
    parser.add_argument("--constant", type=float, default=None, help="write a flat price instead")
    parser.add_argument("out")
    args = parser.parse_args()

    rng = random.Random(args.seed)
    start = datetime(args.year, 1, 1)
    hours = (datetime(args.year + 1, 1, 1) - start).days * 24
    xi = 0.0
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "price_eur_mwh"])
        for k in range(hours):
            t = start + timedelta(hours=k)
            if args.constant is not None:
                price = args.constant
            else:
                day = t.timetuple().tm_yday
                annual = 0.15 * math.cos(2 * math.pi * (day - 15) / 365.25)
                weekly = -0.12 if t.weekday() >= 5 else 0.03
                daily = 0.18 * math.sin(2 * math.pi * (t.hour - 7) / 24) + 0.08 * math.sin(4 * math.pi * t.hour / 24)
                price = math.exp(math.log(32.0) + annual + weekly + daily + xi)
                xi = (1 - args.a) * xi + args.sigma * rng.gauss(0.0, 1.0)
            w.writerow([t.strftime("%Y-%m-%dT%H:%M"), f"{price:.4f}"])


if __name__ == "__main__":
    main()

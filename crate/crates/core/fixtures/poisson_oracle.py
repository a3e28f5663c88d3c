#!/usr/bin/env python3
"""Writes poisson_oracle.csv: p(x; lam) = e^-lam lam^x / x! at 50 digits.

Columns: x, lambda, pmf, ln_pmf (both as 30-significant-digit decimals).
"""
import csv
import os

import mpmath as mp

mp.mp.dps = 50
LAMBDAS = ["0.5", "1", "5", "20", "100"]

out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "poisson_oracle.csv")
with open(out, "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["x", "lambda", "pmf", "ln_pmf"])
    for lam_s in LAMBDAS:
        lam = mp.mpf(lam_s)
        for x in range(0, 301):
            ln_p = -lam + x * mp.log(lam) - mp.loggamma(x + 1)
            p = mp.exp(ln_p)
            w.writerow([x, lam_s, mp.nstr(p, 30, min_fixed=1, max_fixed=0), mp.nstr(ln_p, 30, min_fixed=1, max_fixed=0)])

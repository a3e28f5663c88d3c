#!/usr/bin/env python3
"""Writes aggregation/*.json: aggregation cases with results computed in exact
rational arithmetic (fractions.Fraction), rounded once to f64 at the end.

Replay them with `fedpid verify fixtures/aggregation`.
"""
import json
import os
import random
from fractions import Fraction as F

EPS = F(1e-12)
DEFAULTS = {"alpha": 0.45, "beta": 0.45, "gamma": 0.1, "cw_alpha": 0.5, "window": 6, "k_abs": True}


def fedavg(clients):
    total = sum(c["size"] for c in clients)
    return [F(c["size"], total) for c in clients]


def weights(strategy, params, clients):
    p = {**DEFAULTS, **params}
    shares = fedavg(clients)
    if strategy == "fedavg":
        return shares, "none"
    if any(len(c["cost_history"]) < 2 for c in clients):
        return shares, "missing_history"
    hist = [[F(v) for v in c["cost_history"]] for c in clients]
    if strategy == "fedcostwavg":
        a = F(p["cw_alpha"])
        k = [h[-2] / h[-1] for h in hist]
        kt = sum(k)
        return [a * s + (1 - a) * kj / kt for s, kj in zip(shares, k)], "none"

    alpha, beta, gamma = F(p["alpha"]), F(p["beta"]), F(p["gamma"])
    window = min(p["window"], len(hist[0]))
    k = [h[-2] - h[-1] for h in hist]
    if p["k_abs"]:
        k = [abs(v) for v in k]
    m = [sum(h[-window:]) for h in hist]
    kt, it = sum(k), sum(m)
    fallback = "none"
    use_k = abs(kt) > EPS * max(abs(h[-2]) for h in hist)
    use_i = abs(it) > EPS * max(abs(v) for v in m)
    if not use_k:
        alpha += beta
        fallback = "degenerate_normalizer"
    if not use_i:
        alpha += gamma
        fallback = "degenerate_normalizer"
    out = []
    for j, s in enumerate(shares):
        w = alpha * s
        if use_k:
            w += beta * k[j] / kt
        if use_i:
            w += gamma * m[j] / it
        out.append(w)
    return out, fallback


def fixture(name, strategy, clients, params=None):
    params = params or {}
    w, fallback = weights(strategy, params, clients)
    dim = len(clients[0]["model"])
    model = [sum(wj * F(c["model"][d]) for wj, c in zip(w, clients)) for d in range(dim)]
    return {
        "name": name,
        "strategy": strategy,
        "params": params,
        "clients": clients,
        "expected": {
            "weights": [float(v) for v in w],
            "model": [float(v) for v in model],
            "fallback": fallback,
            "tolerance": 1e-10,
        },
    }


def client(i, size, model, history):
    return {"id": i, "size": size, "model": model, "cost_history": history}


def random_case(rng, strategy, name, hist_len=None):
    n = rng.randint(1, 12)
    dim = rng.randint(1, 6)
    hist_len = hist_len if hist_len is not None else rng.randint(2, 10)
    clients = []
    for i in range(n):
        c0 = rng.uniform(0.5, 5.0)
        history = [c0]
        for _ in range(hist_len - 1):
            history.append(history[-1] * rng.uniform(0.6, 1.2))
        clients.append(client(i, rng.randint(1, 500), [rng.gauss(0, 2) for _ in range(dim)], history[:hist_len]))
    params = {}
    if strategy == "fedpidavg":
        a, b = rng.random(), rng.random()
        a, b = min(a, b), max(a, b)
        params = {"alpha": a, "beta": b - a, "window": rng.randint(1, 8)}
        # keeps the f64 coefficient sum within 1e-12 of one
        params["gamma"] = 1.0 - params["alpha"] - params["beta"]
        params["k_abs"] = rng.random() < 0.5
    elif strategy == "fedcostwavg":
        params = {"cw_alpha": rng.random()}
    return fixture(name, strategy, clients, params)


def cases():
    yield fixture("fedavg_sizes", "fedavg", [client(0, 1, [0.0, 2.0], []), client(1, 3, [4.0, -2.0], [])])
    yield fixture(
        "fedcostwavg_two_clients",
        "fedcostwavg",
        [client(0, 1, [0.0], [2.0, 1.0]), client(1, 3, [1.0], [2.0, 2.0])],
    )
    yield fixture(
        "fedpidavg_two_clients",
        "fedpidavg",
        [client(0, 1, [0.0], [1.0, 1.0, 1.0, 1.0, 1.0, 0.5]), client(1, 1, [1.0], [2.0] * 6)],
    )
    yield fixture(
        "fedpidavg_signed_drop",
        "fedpidavg",
        [client(0, 2, [1.0, 0.0], [3.0, 2.0, 1.0]), client(1, 1, [0.0, 1.0], [1.0, 1.2, 1.5])],
        {"k_abs": False},
    )
    yield fixture(
        "fedpidavg_flat_costs",
        "fedpidavg",
        [client(0, 5, [1.0], [1.5, 1.5]), client(1, 7, [3.0], [0.25, 0.25])],
    )
    yield fixture(
        "fedpidavg_round_zero",
        "fedpidavg",
        [client(0, 2, [1.0, 1.0], [0.8]), client(1, 6, [-1.0, 3.0], [0.9])],
    )
    yield fixture(
        "fedcostwavg_round_zero",
        "fedcostwavg",
        [client(0, 3, [2.0], []), client(1, 1, [6.0], [])],
    )
    yield fixture(
        "fedpidavg_window_three",
        "fedpidavg",
        [client(0, 10, [0.5], [4.0, 3.0, 2.0, 1.0]), client(1, 30, [1.5], [1.0, 1.0, 0.9, 0.8])],
        {"alpha": 0.2, "beta": 0.5, "gamma": 0.3, "window": 3},
    )
    rng = random.Random(20221)
    for i in range(4):
        for strategy in ("fedavg", "fedcostwavg", "fedpidavg"):
            yield random_case(rng, strategy, f"random_{strategy}_{i}")


def main():
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "aggregation")
    os.makedirs(out, exist_ok=True)
    for f in os.listdir(out):
        if f.endswith(".json"):
            os.remove(os.path.join(out, f))
    for i, case in enumerate(cases()):
        with open(os.path.join(out, f"{i:02}_{case['name']}.json"), "w") as f:
            json.dump(case, f, indent=2)
            f.write("\n")


if __name__ == "__main__":
    main()

"""Smoke test for the markov_paging extension.

Build and run from the workspace root:

    cargo build --release -p markov-paging-py --features extension-module
    cp target/release/libmarkov_paging_py.so crates/python/python/markov_paging.so
    python3 crates/python/python/smoke.py
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import markov_paging as mp  # noqa: E402


def main() -> None:
    chain = mp.Chain([[0.2, 0.3, 0.5], [0.1, 0.1, 0.8], [0.3, 0.1, 0.6]])
    assert chain.n == 3
    table = mp.alpha_table(chain)
    # from page 2, page 0 comes next w.p. 0.3 and page 1 w.p. 0.1
    assert abs(table.get(0, 1, 2) - 0.75) < 1e-12
    assert abs(table.get(0, 1, 2) + table.get(1, 0, 2) - 1) < 1e-12
    assert mp.gamma(chain) >= 1

    rnd = mp.Chain.random(4, seed=1, floor=0.05)
    opt = mp.opt_value(rnd, k=2, horizon=20)
    dom, half = mp.expected_misses(rnd, "dominating", k=2, horizon=20, seed=1, trials=4000)
    exact, _ = mp.expected_misses(rnd, "dominating", k=2, horizon=20, seed=1, exact=True)
    assert abs(dom - exact) <= 4 * half, (dom, exact, half)
    assert exact >= opt - 1e-9

    rows = mp.ratios(rnd, ["dominating", "median"], k=2, horizon=20, trials=2000)
    assert [r["policy"] for r in rows] == ["dominating", "median"]
    assert all(r["ratio_low"] <= r["ratio_high"] for r in rows)

    seq = rnd.sample(200, seed=3)
    rep = mp.audit(rnd, seq, k=2, horizon=20)
    assert rep["accounting_holds"] and rep["delta_holds"] and not rep["violations"]

    _, _, ratio = mp.lower_bound_costs(1e-5, 0.7069e-5, 10**8)
    assert ratio >= 1.5907
    assert abs(mp.warmup_ratio(1e-6) - 1.5) < 1e-3

    learned = mp.learn(rnd.sample(100_000, seed=4), 4, truth=rnd)
    assert learned["delta_inf"] < 0.05
    assert math.isfinite(learned["certified_factor"])

    try:
        mp.Chain([[0.5, 0.6], [0.5, 0.5]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-stochastic rows accepted")

    print(f"smoke ok: opt={opt:.4f} dominating={exact:.4f} lb ratio={ratio:.5f}")


if __name__ == "__main__":
    main()

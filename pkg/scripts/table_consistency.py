"""Epsilon and calibrated k/q for published hyperparameter rows."""

from dprdm.accountant import epsilon_for
from dprdm.calibrate import calibrate_k, calibrate_q
from dprdm.ledger import BudgetTarget
from dprdm.mechanism import PrivacyParams

# (T, target eps, sigma, k, q)
ROWS = [
    (10_000, 10.0, 0.05, 34, 0.01),
    (100, 10.0, 0.04, 20, 0.00132),
]


def main(delta=1e-6):
    for t, target, sigma, k, q in ROWS:
        g = epsilon_for(PrivacyParams(k, q, sigma, 1.0), t, delta)
        tgt = BudgetTarget(target, delta, t)
        k_cal = calibrate_k(tgt, sigma, q, 10 * k)
        q_cal = calibrate_q(tgt, sigma, k)
        print(f"T={t:<6} sigma={sigma:<5} k={k:<3} q={q:<8g} -> eps={g.epsilon:.3f} "
              f"(alpha*={g.best_order:g}); calibrated k={k_cal}, q={q_cal:.3g}")


if __name__ == "__main__":
    main()

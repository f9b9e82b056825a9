"""Calibration harness for the synthetic-benchmark acceptance runs.

Sweeps candidate training configurations and prints, for each, the
quantities the acceptance suite checks: ablation gaps on greedy new-class
accuracy, old-class drift, category-count behavior, and the tau_init
spread with and without adaptive updates.  Not part of the package.
"""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from ltc.config import RunConfig
from ltc import runner


def run_one(seed, **kw):
    cfg = RunConfig(run_seed=seed, data_seed=seed, **kw)
    report, model = runner.run_pipeline(cfg)
    return report, model


def mean_over_seeds(n_seeds, **kw):
    acc = {}
    for s in range(n_seeds):
        report, model = run_one(s, **kw)
        for k in ("acc_new_greedy", "acc_old_greedy", "acc_all_greedy",
                  "acc_all_strict", "num_predicted_categories"):
            acc.setdefault(k, []).append(getattr(report, k))
        acc.setdefault("tau", []).append(model.record.final_tau)
    return {k: float(np.mean(v)) for k, v in acc.items()}


def criterion6(base, n_seeds=5):
    full = mean_over_seeds(n_seeds, **base)
    nk = mean_over_seeds(n_seeds, train_enable_mkee=False, **base)
    nm = mean_over_seeds(n_seeds, train_enable_mm=False, **base)
    gap_mkee = (full["acc_new_greedy"] - nk["acc_new_greedy"]) * 100
    gap_mm = (full["acc_new_greedy"] - nm["acc_new_greedy"]) * 100
    old_drift_mkee = (nk["acc_old_greedy"] - full["acc_old_greedy"]) * 100
    old_drift_mm = (nm["acc_old_greedy"] - full["acc_old_greedy"]) * 100
    ok = gap_mkee >= 3 and gap_mm >= 3 and old_drift_mkee <= 5 and old_drift_mm <= 5
    print(f"  C6 {'PASS' if ok else 'FAIL'}: new gaps mkee={gap_mkee:+.1f} mm={gap_mm:+.1f} "
          f"(need >=3); old drift mkee={old_drift_mkee:+.1f} mm={old_drift_mm:+.1f} (need <=5)")
    print(f"     full new={full['acc_new_greedy']:.3f} old={full['acc_old_greedy']:.3f} "
          f"ncls={full['num_predicted_categories']:.0f} tau={full['tau']:.3f}")
    print(f"     nk   new={nk['acc_new_greedy']:.3f} old={nk['acc_old_greedy']:.3f} "
          f"ncls={nk['num_predicted_categories']:.0f} tau={nk['tau']:.3f}")
    print(f"     nm   new={nm['acc_new_greedy']:.3f} old={nm['acc_old_greedy']:.3f} "
          f"ncls={nm['num_predicted_categories']:.0f} tau={nm['tau']:.3f}")
    return ok


def criterion7(base, n_seeds=3):
    taus = (0.3, 0.5, 0.7, 0.9)
    spreads = {}
    for beta, label in ((0.001, "adaptive"), (0.0, "fixed")):
        per_seed = []
        for s in range(n_seeds):
            accs = [run_one(s, tau_init=t, tau_beta=beta, **base)[0].acc_all_greedy
                    for t in taus]
            per_seed.append(max(accs) - min(accs))
        spreads[label] = float(np.mean(per_seed))
    ok = spreads["adaptive"] < spreads["fixed"]
    print(f"  C7 {'PASS' if ok else 'FAIL'}: spread adaptive={spreads['adaptive']:.3f} "
          f"fixed={spreads['fixed']:.3f}")
    return ok


def criterion8(base, n_seeds=5):
    ltc = mean_over_seeds(n_seeds, **base)
    fixed = mean_over_seeds(n_seeds, train_adaptive_tau=False, tau_init=0.9, **base)
    c = 10
    ncls = ltc["num_predicted_categories"]
    ncls_fixed = fixed["num_predicted_categories"]
    ok = c <= ncls <= 3 * c and abs(ncls - c) < abs(ncls_fixed - c)
    print(f"  C8 {'PASS' if ok else 'FAIL'}: ltc ncls={ncls:.1f} (need [10,30]), "
          f"fixed-0.9 ncls={ncls_fixed:.1f}")
    return ok


if __name__ == "__main__":
    candidates = [
        dict(train_batch_size=32, train_epochs=200, optim_lr=1e-3),
        dict(train_batch_size=32, train_epochs=400, optim_lr=1e-3),
        dict(train_batch_size=32, train_epochs=400, optim_lr=1e-3,
             model_hidden="128,128"),
    ]
    for base in candidates:
        print(f"config: {base}")
        t0 = time.perf_counter()
        criterion6(base)
        criterion8(base)
        criterion7(base)
        print(f"  [{time.perf_counter() - t0:.0f}s]\n")

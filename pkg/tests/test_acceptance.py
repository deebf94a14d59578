"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that the terminal summary prints
(see conftest.py), so the outcome of every criterion is visible even when
pytest output is captured.
"""

import functools
import time

import numpy as np
import pytest
from scipy import stats

from spfilter.cli import FAILURE_LR, main
from spfilter.data import make_two_moons, sample_beta_mixture, split_labeled
from spfilter.filters import FilterStrategy
from spfilter.metrics import auroc
from spfilter.mixture import GAUSS, beta_from_moments, beta_mixture, fit_em, posterior
from spfilter.nn import cosine_lr, gradients
from spfilter.trainer import TrainConfig, read_metrics, run_training, save_run

from test_nn import numeric_gradients, random_instance, relative_error

ERROR_BOUND = 0.05
SEEDS = (0, 1, 2)


@functools.lru_cache(maxsize=None)
def two_moons(seed):
    x, y = make_two_moons(1000, 0.1, seed=seed)
    return split_labeled(x, y, 5, seed=seed)


@functools.lru_cache(maxsize=None)
def run(strategy, seed, lr=5e-4, every=1):
    ds, truth = two_moons(seed)
    cfg = TrainConfig(strategy=FilterStrategy.from_name(strategy), lr=lr, epochs=200,
                      meta_update_every=every, seed=seed)
    t = time.perf_counter()
    result = run_training(cfg, ds, truth)
    return result, time.perf_counter() - t


def final_errors(strategy, seeds, **kw):
    return [run(strategy, s, **kw)[0].final_test_error for s in seeds]


def overfit_windows(records, last_epoch=None):
    """Lengths (in epochs) of runs where train loss falls while test loss rises."""
    lengths, cur = [], 0
    for a, b in zip(records, records[1:]):
        if last_epoch is not None and b.epoch > last_epoch:
            break
        if b.labeled_train_loss < a.labeled_train_loss and b.test_loss > a.test_loss:
            cur += 1
        else:
            if cur:
                lengths.append(cur)
            cur = 0
    if cur:
        lengths.append(cur)
    return lengths


class TestAcceptance:
    def test_criterion_01_two_moons_reproduction(self, verdict):
        spf = final_errors("spf", SEEDS)
        cct = final_errors("cct", SEEDS)
        runtime = sum(run(s, k)[1] for s in ("spf", "cct") for k in SEEDS)
        good = sum(e <= ERROR_BOUND for e in spf)
        ratio = np.mean(cct) / max(np.mean(spf), 1e-12)
        ok = good >= 2 and ratio >= 2.0 and runtime < 120
        verdict(1, ok, f"spf errors {spf} ({good}/3 <= 5%), cct errors {cct}, "
                       f"cct/spf mean ratio {ratio:.2f} (need >= 2), runtime {runtime:.0f}s")
        assert good >= 2
        assert runtime < 120
        assert ratio >= 2.0

    def test_criterion_02_early_overfitting_signature(self, verdict, tmp_path):
        recs = {}
        for strategy in ("cct", "spf"):
            out = save_run(run(strategy, 0)[0], tmp_path / strategy, {})
            recs[strategy] = read_metrics(out / "metrics.csv")
        cct = overfit_windows(recs["cct"])
        spf = overfit_windows(recs["spf"], last_epoch=100)
        longest = max(spf, default=0)
        ok = bool(cct) and longest <= 5
        verdict(2, ok, f"cct longest window {max(cct, default=0)} epochs, "
                       f"spf longest window before epoch 100: {longest} (limit 5)")
        assert cct
        assert longest <= 5

    def test_criterion_03_em_oracle_recovery(self, verdict):
        truth = beta_mixture(2, 8, 8, 2, 0.4)
        z, _ = sample_beta_mixture(truth, 10000, seed=0)
        t = time.perf_counter()
        m = fit_em(z, iterations=50)
        elapsed = time.perf_counter() - t
        short = fit_em(z)
        mean_err = np.max(np.abs(np.array(m.means) - [0.2, 0.8]))
        weight_err = np.max(np.abs(np.array(m.weights) - [0.4, 0.6]))
        ok = mean_err <= 0.02 and weight_err <= 0.05 and elapsed < 1.0
        verdict(3, ok, f"means {np.round(m.means, 4).tolist()} weights {np.round(m.weights, 4).tolist()} "
                       f"in {elapsed * 1e3:.0f} ms at 50 iterations; 10 iterations gives means "
                       f"{np.round(short.means, 4).tolist()}")
        assert mean_err <= 0.02
        assert weight_err <= 0.05
        assert elapsed < 1.0

    def test_criterion_04_filter_discrimination(self, verdict):
        recs = run("spf", 0)[0].records
        late = [r for r in recs if r.epoch > 10]
        frac = np.mean([r.filter_auroc is not None and r.filter_auroc > 0.7 for r in late])
        verdict(4, frac >= 0.8, f"filter_auroc > 0.7 in {frac:.1%} of epochs after 10")
        assert frac >= 0.8

    def test_criterion_05_bmm_beats_gmm_on_skewed_scores(self, verdict):
        truth = beta_mixture(1, 5, 15, 1.5, 0.3)
        rows = []
        for seed in range(5):
            z, origin = sample_beta_mixture(truth, 10000, seed=seed)
            positive = origin == 1
            rows.append([auroc(posterior(fit_em(z, family, iterations=it), z), positive)
                         for family in ("beta", GAUSS) for it in (50, 10)])
        rows = np.array(rows)
        bmm, bmm10, gmm, gmm10 = (np.median(rows[:, i]) for i in range(4))
        verdict(5, bmm >= gmm, f"median AUROC bmm {bmm:.6f} vs gmm {gmm:.6f} at 50 iterations "
                               f"(10 iterations: {bmm10:.6f} vs {gmm10:.6f})")
        assert bmm >= gmm

    def test_criterion_06_gradient_correctness(self, verdict):
        worst = 0.0
        for seed in range(20):
            model, batch = random_instance(seed)
            analytic = gradients(model, batch)[1]
            for a, n in zip(analytic, numeric_gradients(model, batch)):
                worst = max(worst, relative_error(a, n))
        verdict(6, worst < 1e-4, f"worst relative error {worst:.2e} over 20 instances")
        assert worst < 1e-4

    def test_criterion_07_formula_spot_checks(self, verdict):
        lr0 = 0.03
        start = cosine_lr(0, 1000, lr0)
        end = cosine_lr(1000, 1000, lr0)
        rng = np.random.default_rng(7)
        worst_rt = 0.0
        for a, b in rng.uniform(0.5, 20, size=(100, 2)):
            mean = a / (a + b)
            var = a * b / ((a + b) ** 2 * (a + b + 1))
            p, _ = beta_from_moments(mean, var)
            worst_rt = max(worst_rt, abs(p.alpha - a) / a, abs(p.beta - b) / b)
        m = beta_mixture(2, 8, 8, 2)
        w = float(posterior(m, [0.8])[0])
        oracle = stats.beta.pdf(0.8, 8, 2) / (stats.beta.pdf(0.8, 8, 2) + stats.beta.pdf(0.8, 2, 8))
        ok = (start == lr0 and abs(end / lr0 - 0.19509) <= 1e-5 and worst_rt < 1e-9
              and abs(w - oracle) <= 1e-4)
        verdict(7, ok, f"lr(0)={start}, lr(K)/lr0={end / lr0:.6f}, round trip {worst_rt:.1e}, "
                       f"posterior {w:.6f} vs oracle {oracle:.6f}")
        assert start == lr0
        assert end / lr0 == pytest.approx(0.19509, abs=1e-5)
        assert worst_rt < 1e-9
        assert w == pytest.approx(oracle, abs=1e-4)

    def test_criterion_08_update_frequency_robustness(self, verdict):
        errs = {every: final_errors("spf", SEEDS, every=every) for every in (1, 2, 4)}
        passes = {every: sum(e <= ERROR_BOUND for e in v) >= 2 for every, v in errs.items()}
        verdict(8, all(passes.values()), f"final errors by meta_update_every: {errs}")
        assert all(passes.values())

    def test_criterion_09_failure_case(self, verdict):
        seeds = range(5)
        failure = final_errors("spf", seeds, lr=FAILURE_LR)
        base = final_errors("spf", seeds)
        ok = np.median(failure) > np.median(base)
        verdict(9, ok, f"lr {FAILURE_LR} errors {failure} (median {np.median(failure):.3f}) vs "
                       f"lr 5e-4 errors {base} (median {np.median(base):.3f})")
        assert np.median(failure) > np.median(base)

    def test_criterion_10_rerun_from_persisted_config(self, verdict, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        assert main(["train", "--seed", "0", "--out", str(first)]) == 0
        assert main(["train", "--config", str(first / "config.json"), "--out", str(second)]) == 0
        same = (first / "metrics.csv").read_bytes() == (second / "metrics.csv").read_bytes()
        verdict(10, same, "metrics.csv byte-identical after re-running from config.json"
                if same else "metrics.csv differs after re-running from config.json")
        assert same

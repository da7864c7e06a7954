"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary (see conftest.py) and also echoed to stdout.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from _helpers import SQRT2, He
from wick_chaos.cli import main
from wick_chaos.densities import (
    DEFAULT_LAMBDAS,
    ExpMixture,
    LogConcave,
    Unit,
    certify_strong_positivity,
    default_grid,
    grid_refute_strong_positivity,
    log_concavity_grid_test,
    wick_square_psd_test,
)
from wick_chaos.hermite import ChaosExpansion, evaluate, gauss_hermite_rule, make_rng, random_expansion
from wick_chaos.inequalities import (
    alternating_sum,
    b_matrix,
    exponential_family_gram,
    gradient_energies,
    psd_check,
    refined_a_matrix,
    schur_product_psd,
    verify_brascamp_lieb,
    verify_classical_poincare,
    verify_hk,
    verify_main_theorem,
    verify_refined_theorem,
    verify_remark5,
)
from wick_chaos.wick import (
    gamma,
    lp_norm,
    partial,
    pointwise_product,
    s_transform,
    wick_correction,
    wick_product,
)

RESULTS: dict[int, str] = {}
SEED = 20240611


@contextmanager
def criterion(n: int, title: str):
    info: dict = {}
    try:
        yield info
    except BaseException:
        RESULTS[n] = f"criterion {n:>2} FAIL  {title}"
        print(RESULTS[n])
        raise
    extra = ", ".join(f"{k}={v}" for k, v in info.items())
    RESULTS[n] = f"criterion {n:>2} PASS  {title}" + (f"  [{extra}]" if extra else "")
    print(RESULTS[n])


def _fmt(x: float) -> str:
    return f"{x:.3g}"


# corpus shared by criteria 3, 4 and 6 -------------------------------------------

MIX_PM1 = ExpMixture([0.5, 0.5], [[1.0], [-1.0]])
MIX_2D = ExpMixture([0.3, 0.7], [[1.0, 0.0], [0.0, -2.0]])
N_CORPUS = 200


def corpus_for(model, dims):
    """200 seeded random polynomials of degree 1..6 for each density."""
    rng = make_rng(SEED)
    out = []
    for j in range(N_CORPUS):
        dim = dims[j % len(dims)]
        out.append(random_expansion(dim, 1 + j % 6, rng))
    return out


@pytest.fixture(scope="module")
def corpus():
    return [
        ("unit", lambda d: Unit(d), corpus_for(None, [1, 2, 3])),
        ("mix-pm1", lambda d: MIX_PM1, corpus_for(None, [1])),
        ("mix-2d", lambda d: MIX_2D, corpus_for(None, [2])),
    ]


# --------------------------------------------------------------------------------

def test_criterion_01_wick_identities():
    with criterion(1, "pointwise and coefficient Wick identities") as info:
        start = time.perf_counter()
        rng = make_rng(SEED + 1)
        nodes = gauss_hermite_rule(13).nodes
        worst_pt = 0.0
        for _ in range(100):
            f = random_expansion(1, 6, rng)
            lhs = evaluate(wick_product(f, f), nodes)
            rhs = evaluate(f, nodes) ** 2
            d, l = partial(f, 0), 1
            while d.coeffs:
                rhs = rhs + (-1) ** l / math.factorial(l) * evaluate(d, nodes) ** 2
                d, l = partial(d, 0), l + 1
            worst_pt = max(worst_pt, float(np.max(np.abs(lhs - rhs) / (1 + np.abs(rhs)))))
        worst_coef = 0.0
        for j in range(100):
            F = random_expansion(1 + j % 3, 1 + j % 6, rng)
            diff = pointwise_product(F, F) - wick_product(F, F)
            worst_coef = max(worst_coef, diff.max_coef_diff(wick_correction(F)))
        elapsed = time.perf_counter() - start
        info.update(pointwise_rel=_fmt(worst_pt), coefficient_abs=_fmt(worst_coef), seconds=_fmt(elapsed))
        assert worst_pt <= 1e-9
        assert worst_coef <= 1e-9
        assert elapsed < 10


def test_criterion_02_characterizing_property():
    with criterion(2, "S-transform of Wick products and E[F<>G] = E[F]E[G]") as info:
        rng = make_rng(SEED + 2)
        worst7 = worst8 = 0.0
        for j in range(100):
            dim = 1 + j % 3
            F = random_expansion(dim, 1 + j % 4, rng)
            G = random_expansion(dim, 1 + (j // 4) % 4, rng)
            h = rng.standard_normal(dim)
            W = wick_product(F, G)
            worst7 = max(worst7, abs(s_transform(W, h) - s_transform(F, h) * s_transform(G, h)))
            worst8 = max(worst8, abs(W.mean - F.mean * G.mean))
        info.update(s_transform_abs=_fmt(worst7), mean_abs=_fmt(worst8))
        assert worst7 <= 1e-9 and worst8 <= 1e-9


def test_criterion_03_classical_recovery(corpus):
    with criterion(3, "main theorem with nu = 1 reproduces classical Poincare") as info:
        _, build, polys = corpus[0]
        for F in polys:
            lo, up = verify_main_theorem(F, build(F.dim))
            cl = verify_classical_poincare(F)
            assert (up.lhs, up.rhs, up.verdict) == (cl.lhs, cl.rhs, cl.verdict)
            assert lo.rhs == cl.lhs
        _, up = verify_main_theorem(He(1), Unit(1))
        info.update(instances=len(polys), he1_upper=f"{up.lhs}={up.rhs}")
        assert up.verdict == "equality" and up.lhs == up.rhs == 1.0


def test_criterion_04_main_theorem_corpus(corpus):
    with criterion(4, "weighted Poincare bounds and (E_nu F)^2 <= <<F<>F, nu>> on the density corpus") as info:
        start = time.perf_counter()
        worst_gap = math.inf
        worst_path = 0.0
        count = 0
        for name, build, polys in corpus:
            for F in polys:
                nu = build(F.dim)
                lo, up = verify_main_theorem(F, nu)
                r5 = verify_remark5(F, nu)
                scale = lo.details["scale"]
                for rep in (lo, up, r5):
                    worst_gap = min(worst_gap, rep.gap / scale)
                    assert rep.gap >= -1e-7 * scale, (name, rep)
                if "path_discrepancy" in lo.details:
                    rel = lo.details["path_discrepancy"] / scale
                    worst_path = max(worst_path, rel)
                    assert rel <= 1e-7
                count += 1
        elapsed = time.perf_counter() - start
        info.update(instances=count, min_gap_over_scale=_fmt(worst_gap), max_path_over_scale=_fmt(worst_path),
                    seconds=_fmt(elapsed))
        assert elapsed < 60


def test_criterion_05_houdre_kagan():
    with criterion(5, "Houdre-Kagan values and full-sum exactness") as info:
        lo, up = verify_hk(He(3), 1)
        assert (lo.lhs, lo.rhs, up.rhs) == (0.0, 6.0, 18.0)
        _, up2 = verify_hk(He(3), 2)
        assert up2.lhs == up2.rhs == 6.0 and up2.verdict == "equality"
        rng = make_rng(SEED + 5)
        worst = 0.0
        for j in range(100):
            F = random_expansion(1 + j % 3, 1 + j % 6, rng)
            e = gradient_energies(F, F.degree)
            worst = max(worst, abs(alternating_sum(e, F.degree) - F.variance()))
        info.update(k1=f"({lo.lhs:g}, {lo.rhs:g}, {up.rhs:g})", k2_upper=f"{up2.lhs:g}={up2.rhs:g}",
                    full_sum_abs=_fmt(worst))
        assert worst <= 1e-10


def test_criterion_06_refined_theorem(corpus):
    with criterion(6, "refined theorem on the corpus, k = 1, 2, 3") as info:
        worst_gap = math.inf
        worst_eq = 0.0
        count = equalities = 0
        for name, build, polys in corpus:
            for F in polys:
                nu = build(F.dim)
                for k in (1, 2, 3):
                    r = verify_refined_theorem(F, nu, k)
                    scale = r.details["scale"]
                    worst_gap = min(worst_gap, r.gap / scale)
                    assert r.gap >= -1e-7 * scale, (name, k, r)
                    if name == "unit" and 2 * k - 1 >= F.degree:
                        worst_eq = max(worst_eq, abs(r.gap))
                        assert abs(r.gap) <= 1e-9
                        equalities += 1
                    count += 1
        info.update(instances=count, unit_equalities=equalities, max_abs_equality_gap=_fmt(worst_eq),
                    min_gap_over_scale=_fmt(worst_gap))


def test_criterion_07_strong_positivity_counterexample():
    with criterion(7, "(x^2-1)^2/2 refuted at sqrt 2; mixtures certified, never refuted") as info:
        nu = ChaosExpansion(1, {(0,): 1.0, (2,): 2.0, (4,): 0.5})
        assert grid_refute_strong_positivity(nu, [1.0]).verdict == "inconclusive"
        rep = grid_refute_strong_positivity(nu, [SQRT2])
        assert rep.verdict == "refuted"
        pts = sorted(w.point[0] for w in rep.witnesses)
        vals = [w.value for w in rep.witnesses]
        assert len(pts) == 2 and abs(pts[0] + SQRT2) <= 1e-6 and abs(pts[1] - SQRT2) <= 1e-6
        assert all(abs(v + 5) <= 1e-6 for v in vals)
        mixtures = [MIX_PM1, MIX_2D, ExpMixture([0.5, 0.5], [[2.0], [-2.0]]),
                    ExpMixture([0.2, 0.3, 0.5], [[0.5, 0.5, 0.0], [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])]
        for m in mixtures:
            assert certify_strong_positivity(m).verdict == "certified-strong"
            assert grid_refute_strong_positivity(m, DEFAULT_LAMBDAS, default_grid(m.dim)).verdict == "inconclusive"
            assert wick_square_psd_test(m, trials=100, seed=SEED).verdict == "inconclusive"
        info.update(witnesses=[(round(p, 9), round(v, 9)) for p, v in zip(pts, vals)],
                    mixtures_checked=len(mixtures))


def test_criterion_08_psd_machinery():
    with criterion(8, "PSD lemma matrices on random families") as info:
        rng = make_rng(SEED + 8)
        worst: dict[str, float] = {}

        def note(name, check):
            worst[name] = min(worst.get(name, math.inf), check.min_eigenvalue)

        for t in range(100):
            dim, r = 1 + t % 4, 2 + t % 5
            hs = rng.standard_normal((r, dim))
            note("b", b_matrix(hs)[1])
            for k in (1, 2, 3):
                note(f"a_k{k}", refined_a_matrix(hs, k)[1])
            w = rng.dirichlet(np.ones(3))
            w[-1] = 1 - w[:-1].sum()
            mix = ExpMixture(w, rng.standard_normal((3, dim)))
            note("exp_gram", exponential_family_gram(mix, hs)[1])
            G1, G2 = rng.standard_normal((r, r)), rng.standard_normal((r, r))
            note("schur", schur_product_psd(G1 @ G1.T, G2 @ G2.T)[1])
        info.update(**{k: _fmt(v) for k, v in worst.items()})
        assert all(v >= -1e-9 for v in worst.values())


def test_criterion_09_hypercontractivity():
    with criterion(9, "||Gamma(1/sqrt2) G||_3 <= ||G||_2") as info:
        rng = make_rng(SEED + 9)
        slack = math.inf
        for j in range(100):
            G = random_expansion(1 + j % 3, 1 + j % 6, rng)
            slack = min(slack, G.norm() - lp_norm(gamma(G, 1 / SQRT2), 3))
        info.update(min_slack=_fmt(slack))
        assert slack >= -1e-6


def test_criterion_10_brascamp_lieb_and_log_concavity():
    with criterion(10, "Brascamp-Lieb equality and two-bump log-concavity failure") as info:
        r = verify_brascamp_lieb(LogConcave.quadratic([[1.0]]), He(1))
        assert abs(r.lhs - 1) <= 1e-8 and abs(r.rhs - 1) <= 1e-8
        lc = log_concavity_grid_test(ExpMixture([0.5, 0.5], [[2.0], [-2.0]]))
        assert not lc.log_concave_on_grid
        point, eig = lc.witnesses[0]
        assert abs(point[0]) <= 1e-9 and abs(eig + 3) <= 1e-4
        info.update(bl=f"{r.lhs:.12g} vs {r.rhs:.12g}", witness=f"w={point[0]:g}, eig={eig:.12g}")


def test_criterion_11_cli_determinism(tmp_path):
    from pathlib import Path

    data = Path(__file__).parent / "data"
    with criterion(11, "demo byte-identical; golden exit codes") as info:
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert main(["demo", "-o", str(a)]) == main(["demo", "-o", str(b)])
        assert a.read_bytes() == b.read_bytes()
        codes = {}
        for name, expected in [("unit_he1_main", 0), ("mixture_he2", 0), ("counterexample_positivity", 2)]:
            codes[name] = main(["run", str(data / f"{name}.json"), "-o", str(tmp_path / f"{name}.json")])
            assert codes[name] == expected
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"dims": 1}))
        codes["malformed"] = main(["run", str(bad)])
        assert codes["malformed"] == 1
        info.update(**codes)

"""Acceptance suite. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion (see ``conftest.py``)."""

import subprocess
import sys
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from deployscore.budgets import budget_minutes, error_budget, soft_error_budget
from deployscore.cli import EXIT_OK, main
from deployscore.effectiveness import achieved_slo, deployment_index
from deployscore.errors import ConvergenceWarning
from deployscore.irt import ResponseMatrix, fit, max_information_theta, score_abilities
from deployscore.scoring import ads

import test_budgets
import test_effectiveness
import test_irt
import test_scoring
import test_store
from oracles import GridOracle, pearson_closed_form, simulate_matrix

THETA_TOL = 0.10
ADS_TOL = 0.15
TABLE1_SECONDS = 1.0
INFO_BAND = (-1.0, 0.5)

ORACLE_MATRICES = 20
ORACLE_TOL = 0.05
ORACLE_SECONDS = 30.0
ORACLE_SEED = 20201
# the oracle grid spans [-3, 3]; estimates near its edge are not comparable
ORACLE_EDGE = 2.9
ORACLE_MAX_DRAWS = 400

MIN_PROPERTY_CASES = 100


@pytest.fixture(scope="module")
def timed(table1_matrix):
    start = time.perf_counter()
    model = fit(table1_matrix)
    est = score_abilities(table1_matrix, model)
    return model, est, time.perf_counter() - start


@pytest.mark.criterion(1, "Table 1 reproduction")
class TestTable1Reproduction:
    def test_shared_patterns_bitwise_identical(self, table1_matrix, timed):
        _, est, _ = timed
        by_pattern = {}
        for e, (_, row) in zip(est, table1_matrix.rows()):
            by_pattern.setdefault(tuple(row), set()).add(e.theta)
        assert all(len(thetas) == 1 for thetas in by_pattern.values())

    def test_rank_order_of_distinct_patterns(self, table1_matrix, table1_expected, timed):
        _, est, _ = timed
        ours, published = {}, {}
        for e, exp, (_, row) in zip(est, table1_expected, table1_matrix.rows()):
            ours[tuple(row)] = e.theta
            published[tuple(row)] = exp["theta"]
        patterns = list(ours)
        assert len(patterns) == 14
        assert sorted(patterns, key=ours.get) == sorted(patterns, key=published.get)

    def test_values_within_tolerance(self, table1_expected, timed):
        model, est, _ = timed
        for e, exp in zip(est, table1_expected):
            assert e.deployment_id == exp["deployment_id"]
            assert abs(e.theta - exp["theta"]) <= THETA_TOL, e.deployment_id
            assert abs(ads(e.theta, model) - exp["ads"]) <= ADS_TOL, e.deployment_id

    def test_control_d_negative(self, timed):
        model, _, _ = timed
        assert model.item("control_d").discrimination < 0

    def test_runtime(self, timed):
        *_, seconds = timed
        assert seconds < TABLE1_SECONDS


@pytest.mark.criterion(2, "information band")
def test_information_peak_in_band(table1_model):
    lo, hi = INFO_BAND
    assert lo <= max_information_theta(table1_model) <= hi


@pytest.mark.criterion(3, "error-budget worked example")
def test_error_budget_bit_exact():
    budget = error_budget(0.9999)
    assert budget == 0.0001
    assert budget_minutes(budget, 30) == 4.32


@pytest.mark.criterion(4, "oracle equivalence")
def test_oracle_equivalence():
    rng = np.random.default_rng(ORACLE_SEED)
    oracle = GridOracle()
    ids = tuple(f"r{k}" for k in range(30))
    deviations, draws = [], 0
    start = time.perf_counter()
    while len(deviations) < ORACLE_MATRICES and draws < ORACLE_MAX_DRAWS:
        draws += 1
        a, b = rng.uniform(0.8, 2.0, 3), rng.uniform(-1.0, 1.0, 3)
        X = simulate_matrix(rng, a, b, 30)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            model = fit(ResponseMatrix(("i1", "i2", "i3"), ids, X))
        est = np.r_[model.discriminations, model.difficulties]
        if not model.diagnostics.converged or np.abs(est).max() > ORACLE_EDGE:
            continue
        ref = np.r_[oracle.maximize(X)]
        if np.abs(ref).max() > ORACLE_EDGE:
            continue
        deviations.append(np.abs(est - ref).max())
    elapsed = time.perf_counter() - start
    print(f"oracle: {len(deviations)} matrices from {draws} draws, worst deviation "
          f"{max(deviations, default=float('nan')):.4f}, {elapsed:.1f} s")
    assert len(deviations) >= ORACLE_MATRICES
    assert max(deviations) <= ORACLE_TOL
    assert elapsed < ORACLE_SECONDS


PROPERTY_SUITES = [
    ("ICC monotone in ability", test_irt.TestItemCharacteristicCurve, "test_strictly_monotone_with_sign_of_slope"),
    ("ICC inside (0, 1)", test_irt.TestItemCharacteristicCurve, "test_open_unit_interval"),
    ("EM log-likelihood monotone", test_irt.TestFit, "test_loglik_never_decreases"),
    ("ADS strict bounds", test_scoring.TestADS, "test_strictly_inside_item_count"),
    ("ADS decomposition", test_scoring.TestADS, "test_decomposes_over_items"),
    ("soft budget bracketing", test_budgets.TestBudgetProperties, "test_bracketing"),
    ("soft budget self-exclusion", test_budgets.TestBudgetProperties, "test_self_exclusion"),
    ("soft budget decomposition", test_budgets.TestBudgetProperties, "test_decomposition"),
    ("correlation affine invariance", test_effectiveness.TestCorrelationProperties, "test_affine_invariance"),
    ("correlation permutation equivariance", test_effectiveness.TestCorrelationProperties,
     "test_permutation_equivariance"),
]


def run_property_suite(cls, method):
    """Check the declared case count, then run the suite in a fresh pytest process.

    A separate process keeps hypothesis from seeing one test driven by two
    different class instances in the same session.
    """
    test = getattr(cls, method)
    assert test._hypothesis_internal_use_settings.max_examples >= MIN_PROPERTY_CASES
    module = sys.modules[cls.__module__].__file__
    node = f"{module}::{cls.__name__}::{method}"
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", node],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stdout[-3000:]


@pytest.mark.criterion(5, "invariant suites")
@pytest.mark.parametrize("name, cls, method", PROPERTY_SUITES, ids=[s[0] for s in PROPERTY_SUITES])
def test_invariant_suite(name, cls, method):
    run_property_suite(cls, method)


@pytest.mark.criterion(6, "derived hand-arithmetic examples")
class TestDerivedExamples:
    def test_soft_budget(self, worked_mesh):
        res = soft_error_budget("target", "checkout", worked_mesh)
        f = Fraction
        exact = (1 - f("0.999")) - (1 - f("2.959") / 5) * f("0.0005") - (1 - f("0.556") / 5) * f("0.001")
        assert exact == f("-0.0000929")
        assert res.soft_budget == pytest.approx(float(exact), abs=1e-15)
        assert res.clamped_soft_budget == 0.0

    def test_achieved_slo(self):
        assert achieved_slo([(0.0, 10.0, 0.9990), (10.0, 30.0, 0.9999)], (0.0, 30.0)) == pytest.approx(
            0.9996, abs=1e-15)

    def test_deployment_index(self):
        x, y = (1, 2, 3), (0.990, 0.995, 0.999)
        res = deployment_index(test_effectiveness.outcomes(x, y))
        assert res.index == pytest.approx(pearson_closed_form(x, y), abs=1e-12)


ROUND_TRIPS = ["test_model", "test_reports", "test_mesh"]


@pytest.mark.criterion(7, "round trips and CLI determinism")
class TestRoundTrips:
    @pytest.mark.parametrize("method", ROUND_TRIPS)
    def test_lossless(self, method):
        run_property_suite(test_store.TestRoundTripProperties, method)

    def test_cli_reruns_byte_identical(self, data_dir, tmp_path, capsys):
        responses = str(data_dir / "table1_responses.csv")
        model = str(tmp_path / "model.json")
        outputs = []
        for _ in range(2):
            steps = [
                ["fit", responses, "-o", model],
                ["score", responses, model],
                ["score", responses, model, "--format", "csv", "--gaps"],
                ["report", responses, model],
                ["curves", model],
            ]
            texts = []
            for argv in steps:
                assert main(argv) == EXIT_OK
                texts.append(capsys.readouterr().out)
            texts.append((tmp_path / "model.json").read_text())
            outputs.append(texts)
        assert outputs[0] == outputs[1]

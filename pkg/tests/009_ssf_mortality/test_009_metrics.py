#!/usr/bin/env python3
"""
SSF mortality - retirement metrics and published table regression tests

The committed e-vectors under spikes/009_ssf_mortality/data were inverted
from the published SSF and CT1 tables; the fixtures here are those tables.

Run tests with:
    $ uv run pytest tests/009_ssf_mortality/test_009_metrics.py -v

Copyright (c) 2025 LAB271
SPDX-License-Identifier: Apache-2.0
"""

import csv
import math
import os
import sys
import unittest

import numpy as np
import pandas as pd
from scipy import optimize

# Add tests directory to path to import test_utils
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "../..")))
from tests.test_utils import load_spike_module

metrics = load_spike_module("009_ssf_mortality", "metrics")
rules = load_spike_module("009_ssf_mortality", "rules")
lifetable = load_spike_module("009_ssf_mortality", "lifetable")
cli_io = load_spike_module("009_ssf_mortality", "cli_io")
errors = load_spike_module("009_ssf_mortality", "errors")

RuleMode = rules.RuleMode
Scenario = rules.Scenario
WorkerClass = rules.WorkerClass
ExpectancyTable = lifetable.ExpectancyTable

CONFIG = rules.load_rule_config()
CATALOG = cli_io.SourceCatalog(cli_io.DEFAULT_TABLES_DIR)
FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def flat_table(e, ages=range(30, 101)):
    ages = tuple(ages)
    return ExpectancyTable(ages, tuple([e] * len(ages)), label=f"flat {e}")


def read_matrix(name):
    with open(os.path.join(FIXTURES, name), encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    ages = [int(a) for a in rows[0][1:]]
    cts = [int(r[0]) for r in rows[1:]]
    cells = [[float(v) if v else math.nan for v in r[1:]] for r in rows[1:]]
    return ages, cts, np.array(cells)


class FlatCatalog:
    def __init__(self, e):
        self.table = flat_table(e)

    def source(self, kind, table_year):
        return self.table


class TestRelativeDiscrepancy(unittest.TestCase):
    def test_values(self):
        self.assertEqual(metrics.relative_discrepancy(0.9, 0.9), 0.0)
        self.assertAlmostEqual(metrics.relative_discrepancy(1.05 * 0.8, 0.8), 5.0)
        self.assertAlmostEqual(metrics.relative_discrepancy(1.00705, 1.0), 0.706, delta=0.01)

    def test_zero_official_factor(self):
        with self.assertRaises(errors.RuleError):
            metrics.relative_discrepancy(1.0, 0.0)

    def test_swap_is_multiplicative_inverse(self):
        rng = np.random.default_rng(9)
        for a, b in rng.uniform(0.4, 1.6, size=(100, 2)):
            ab = metrics.relative_discrepancy(a, b)
            ba = metrics.relative_discrepancy(b, a)
            self.assertAlmostEqual((1 + ab / 100) * (1 + ba / 100), 1.0, delta=1e-12)

    def test_expectancy_discrepancy(self):
        self.assertAlmostEqual(metrics.expectancy_discrepancy(20.8, 21.4), (21.4 / 20.8 - 1) * 100)
        with self.assertRaises(errors.RuleError):
            metrics.expectancy_discrepancy(0.0, 21.4)


class TestCt1(unittest.TestCase):
    def test_published_cell(self):
        self.assertEqual(f"{metrics.ct1(60, 21.4, 0.31):.2f}", "40.04")

    def test_closed_form_matches_bisection(self):
        rng = np.random.default_rng(1000)
        for _ in range(1000):
            x, e = rng.uniform(43, 70), rng.uniform(5, 45)
            oracle = optimize.bisect(lambda ct, x=x, e=e: rules.ssf(x, ct, e) - 1, 1e-9, 100, xtol=1e-12)
            value = metrics.ct1(x, e)
            self.assertAlmostEqual(value, oracle, delta=1e-9)
            self.assertAlmostEqual(rules.ssf(x, value, e), 1.0, delta=1e-9)

    def test_inverse_of_unit_factor(self):
        x, A = 55, 0.31
        e = 35 * A * (1 + (x + 35 * A) / 100)
        self.assertAlmostEqual(metrics.ct1(x, e, A), 35.0, places=10)

    def test_monotone(self):
        self.assertGreater(metrics.ct1(55, 25.0), metrics.ct1(56, 25.0))
        self.assertLess(metrics.ct1(55, 25.0), metrics.ct1(55, 25.1))

    def test_feasibility(self):
        ok = metrics.ct1_feasibility(43, 35.0, WorkerClass.FEMALE_TEACHER, CONFIG)
        self.assertTrue(ok.feasible)
        self.assertEqual(str(ok), "feasible")

        too_long = metrics.ct1_feasibility(53, 51.02, WorkerClass.MALE_WORKER, CONFIG)
        self.assertEqual((too_long.entry_age_ok, too_long.above_min_ect), (False, True))
        self.assertEqual(str(too_long), "infeasible_entry_age")

        too_short = metrics.ct1_feasibility(64, 34.0, WorkerClass.MALE_WORKER, CONFIG)
        self.assertEqual((too_short.entry_age_ok, too_short.above_min_ect), (True, False))
        self.assertEqual(str(too_short), "below_min_ect")

    def test_feasibility_reports_both_failures(self):
        # max CT at 50 is 32, minimum ECT is 35
        both = metrics.ct1_feasibility(50, 34.0, WorkerClass.MALE_WORKER, CONFIG)
        self.assertFalse(both.entry_age_ok)
        self.assertFalse(both.above_min_ect)
        self.assertFalse(both.feasible)
        self.assertEqual(str(both), "infeasible_entry_age+below_min_ect")

    def test_published_table(self):
        table = pd.concat(
            [metrics.ct1_table(range(2000, 2020), CATALOG, kind, range(53, 65), CONFIG) for kind in ("official", "ggm")],
            ignore_index=True,
        )
        computed = {(int(r.ssf_year), r.source, int(r.age)): r.ct1 for r in table.itertuples()}
        with open(os.path.join(FIXTURES, "published_ct1.csv"), encoding="utf-8") as fh:
            published = list(csv.DictReader(fh))
        self.assertEqual(len(published), 480)
        for row in published:
            key = (int(row["ssf_year"]), row["source"], int(row["age"]))
            with self.subTest(cell=key):
                self.assertEqual(f"{computed[key]:.2f}", row["ct1"])

    def test_table_flags_every_class(self):
        table = metrics.ct1_table([2015], CATALOG, "official", [53], CONFIG)
        self.assertEqual(table.loc[0, "male_worker"], "infeasible_entry_age")
        self.assertEqual(list(table.columns[:4]), ["ssf_year", "source", "age", "ct1"])


class TestNra(unittest.TestCase):
    def test_flat_table_against_scalar_root(self):
        scenario = Scenario(2012, flat_table(20.0), CONFIG)
        result = metrics.nra(WorkerClass.MALE_WORKER, 18, scenario)
        oracle = optimize.brentq(lambda x: rules.ssf(x, x - 18, 20.0) - 1, 53, 70, xtol=1e-12)
        self.assertAlmostEqual(result.nra, oracle, delta=1e-6)
        self.assertAlmostEqual(result.nra, 56.35, delta=0.005)
        self.assertAlmostEqual(result.ect_at_nra, result.nra - 18)

    def test_points_mode(self):
        scenario = Scenario(2016, flat_table(20.0), CONFIG)
        expected = {
            WorkerClass.MALE_WORKER: (56.5, 38.5),
            WorkerClass.FEMALE_WORKER: (51.5, 33.5),
            WorkerClass.MALE_TEACHER: (54.0, 36.0),
            WorkerClass.FEMALE_TEACHER: (49.0, 31.0),
        }
        for cls, (age, ect) in expected.items():
            with self.subTest(cls=cls):
                result = metrics.nra(cls, 18, scenario, RuleMode.POINTS)
                self.assertAlmostEqual(result.nra, age)
                self.assertAlmostEqual(result.ect_at_nra, ect)

    def test_points_mode_shifts(self):
        late = metrics.nra(WorkerClass.MALE_WORKER, 23, Scenario(2016, flat_table(20.0), CONFIG), RuleMode.POINTS)
        self.assertAlmostEqual(late.nra, 59.0)
        self.assertAlmostEqual(late.ect_at_nra, 36.0)
        raised = metrics.nra(WorkerClass.MALE_WORKER, 18, Scenario(2019, flat_table(20.0), CONFIG), RuleMode.POINTS)
        self.assertAlmostEqual(raised.nra, 57.0)
        self.assertAlmostEqual(raised.ect_at_nra, 39.0)
        with self.assertRaises(errors.RuleError):
            metrics.nra(WorkerClass.MALE_WORKER, 18, Scenario(2012, flat_table(20.0), CONFIG), RuleMode.POINTS)

    def test_published_nra_values(self):
        cases = [
            ("ggm", 2004, WorkerClass.MALE_WORKER, 58.53),
            ("ggm", 2007, WorkerClass.MALE_WORKER, 58.97),
            ("ggm", 2013, WorkerClass.MALE_WORKER, 59.11),
            ("ggm", 2016, WorkerClass.MALE_WORKER, 59.96),
            ("official", 2012, WorkerClass.MALE_WORKER, 59.39),
            ("official", 2014, WorkerClass.MALE_WORKER, 59.82),
            ("official", 2012, WorkerClass.FEMALE_WORKER, 57.46),
            ("official", 2012, WorkerClass.FEMALE_TEACHER, 55.69),
        ]
        for kind, year, cls, expected in cases:
            with self.subTest(source=kind, year=year, cls=cls):
                scenario = Scenario(year, CATALOG.source(kind, year - 2), CONFIG, kind)
                self.assertAlmostEqual(metrics.nra(cls, 18, scenario, RuleMode.SSF).nra, expected, delta=0.006)

    def test_floor_jump_lands_on_integer_age(self):
        cases = [
            ("official", 2015, WorkerClass.MALE_WORKER, 60.0),
            ("official", 2015, WorkerClass.FEMALE_WORKER, 58.0),
            ("ggm", 2012, WorkerClass.MALE_WORKER, 59.0),
            ("ggm", 2012, WorkerClass.FEMALE_WORKER, 57.0),
            ("ggm", 2012, WorkerClass.FEMALE_TEACHER, 55.0),
        ]
        for kind, year, cls, expected in cases:
            with self.subTest(source=kind, year=year, cls=cls):
                scenario = Scenario(year, CATALOG.source(kind, year - 2), CONFIG, kind)
                self.assertEqual(metrics.nra(cls, 18, scenario, RuleMode.SSF).nra, expected)

    def test_result_brackets_unit_factor(self):
        for year in range(2000, 2020):
            scenario = Scenario(year, CATALOG.source("official", year - 2), CONFIG)
            age = metrics.nra(WorkerClass.MALE_WORKER, 18, scenario).nra

            def factor(x, scenario=scenario):
                return rules.ssf(x, x - 18, scenario.e_for(x))

            with self.subTest(year=year):
                self.assertGreaterEqual(factor(age + 1e-6), 1.0)
                if age != int(age):
                    self.assertLess(factor(age - 1e-6), 1.0)
                else:
                    self.assertLess(factor(math.nextafter(age, 0)), 1.0)

    def test_combined_takes_earlier_of_points_and_ssf(self):
        scenario = Scenario(2015, CATALOG.source("official", 2013), CONFIG)
        self.assertAlmostEqual(metrics.nra(WorkerClass.MALE_WORKER, 18, scenario, RuleMode.COMBINED).nra, 56.5)
        self.assertAlmostEqual(metrics.nra(WorkerClass.FEMALE_WORKER, 18, scenario, RuleMode.COMBINED).nra, 51.5)
        pre_points = Scenario(2012, CATALOG.source("official", 2010), CONFIG)
        self.assertAlmostEqual(
            metrics.nra(WorkerClass.MALE_WORKER, 18, pre_points, RuleMode.COMBINED).nra, 59.39, delta=0.006
        )

    def test_constant_source_gives_constant_nra(self):
        values = {metrics.nra(WorkerClass.MALE_WORKER, 18, Scenario(y, flat_table(21.0), CONFIG)).nra for y in range(2000, 2015)}
        self.assertEqual(len(values), 1)

    def test_no_crossing(self):
        with self.assertRaises(errors.NumericalFailure):
            metrics.nra(WorkerClass.MALE_WORKER, 18, Scenario(2012, flat_table(80.0), CONFIG))

    def test_entry_age_below_minimum(self):
        with self.assertRaises(errors.RuleError):
            metrics.nra(WorkerClass.MALE_WORKER, 16, Scenario(2012, flat_table(20.0), CONFIG))

    def test_vintage_without_younger_ages(self):
        scenario = Scenario(2016, CATALOG.source("official", 2014), CONFIG)
        with self.assertRaises(LookupError):
            metrics.nra(WorkerClass.FEMALE_WORKER, 18, scenario)


class TestPublishedTables(unittest.TestCase):
    def assertMatrixMatches(self, computed, published, tolerance=1e-9):
        self.assertEqual(computed.shape, published.shape)
        np.testing.assert_array_equal(np.isnan(computed), np.isnan(published))
        mask = ~np.isnan(published)
        rounded = np.array([float(f"{v:.3f}") for v in computed[mask]])
        np.testing.assert_allclose(rounded, published[mask], atol=tolerance)

    def test_ssf_2012_fragments(self):
        for kind in ("official", "ggm"):
            with self.subTest(source=kind):
                ages, cts, published = read_matrix(f"published_ssf_2012_{kind}.csv")
                scenario = Scenario(2012, CATALOG.source(kind, 2010), CONFIG, kind)
                computed = metrics.ssf_matrix(scenario, ages, cts, WorkerClass.FEMALE_TEACHER)
                self.assertMatrixMatches(computed, published)

    def test_combined_2015_fragments(self):
        for kind in ("official", "ggm"):
            with self.subTest(source=kind):
                ages, ects, published = read_matrix(f"published_combined_2015_{kind}.csv")
                scenario = Scenario(2015, CATALOG.source(kind, 2013), CONFIG, kind)
                computed = metrics.ssf_matrix(scenario, ages, ects, WorkerClass.FEMALE_WORKER, RuleMode.COMBINED, "ect")
                self.assertMatrixMatches(computed, published)

    def test_discrepancy_2015(self):
        ages, ects, published = read_matrix("published_discrepancy_2015.csv")
        comparison = metrics.compare(
            2015,
            CATALOG.source("official", 2013),
            CATALOG.source("ggm", 2013),
            ages,
            ects,
            WorkerClass.FEMALE_WORKER,
            CONFIG,
            RuleMode.COMBINED,
            "ect",
        )
        self.assertMatrixMatches(comparison.discrepancy, published)
        cell = comparison.discrepancy[ects.index(31), ages.index(63)]
        self.assertAlmostEqual(cell, 0.706, delta=0.01)

    def test_invalid_ct_kind(self):
        with self.assertRaises(ValueError):
            metrics.ssf_matrix(Scenario(2012, flat_table(20.0), CONFIG), [60], [35], WorkerClass.MALE_WORKER, ct_kind="x")


class TestSweep(unittest.TestCase):
    def test_shape_and_year_lag(self):
        (comparison,) = metrics.sweep([2012], CATALOG, range(43, 61), range(35, 53), WorkerClass.FEMALE_TEACHER, CONFIG)
        self.assertTrue(comparison.ok)
        self.assertEqual(comparison.factor_official.shape, (18, 18))
        self.assertEqual(comparison.discrepancy.shape, (18, 18))

    def test_first_points_year_has_both_modes(self):
        results = metrics.sweep([2014, 2015, 2016], CATALOG, range(53, 65), range(35, 46), WorkerClass.MALE_WORKER, CONFIG)
        self.assertEqual(
            [(c.ssf_year, c.rule_mode) for c in results],
            [(2014, RuleMode.SSF), (2015, RuleMode.SSF), (2015, RuleMode.COMBINED), (2016, RuleMode.COMBINED)],
        )

    def test_identical_sources_give_zero_discrepancy(self):
        (comparison,) = metrics.sweep([2010], FlatCatalog(22.0), range(53, 65), range(35, 46), WorkerClass.MALE_WORKER, CONFIG)
        finite = comparison.discrepancy[np.isfinite(comparison.discrepancy)]
        self.assertTrue(finite.size > 0)
        self.assertTrue(np.all(finite == 0.0))

    def test_missing_vintage_keeps_going(self):
        results = metrics.sweep([1999, 2000], CATALOG, range(53, 65), range(35, 46), WorkerClass.MALE_WORKER, CONFIG)
        self.assertFalse(results[0].ok)
        self.assertIn("1997", results[0].error)
        self.assertTrue(results[1].ok)

    def test_parallel_matches_sequential(self):
        args = (range(2008, 2018), CATALOG, range(53, 65), range(35, 46), WorkerClass.MALE_WORKER, CONFIG)
        sequential = metrics.sweep(*args)
        parallel = metrics.sweep(*args, workers=4)
        self.assertEqual([(c.ssf_year, c.rule_mode) for c in sequential], [(c.ssf_year, c.rule_mode) for c in parallel])
        for a, b in zip(sequential, parallel, strict=True):
            np.testing.assert_array_equal(a.discrepancy, b.discrepancy)


class TestSeries(unittest.TestCase):
    def test_nra_series(self):
        frame = metrics.nra_series([2012, 2016], CATALOG, "official", [WorkerClass.MALE_WORKER, WorkerClass.FEMALE_WORKER], CONFIG)
        self.assertEqual(len(frame), 2 * 2 * 2)
        male_2012 = frame[(frame.ssf_year == 2012) & (frame.worker_class == "male_worker") & (frame.entry_age == 18)]
        self.assertAlmostEqual(male_2012.nra.iloc[0], 59.39, delta=0.006)
        female_2016 = frame[(frame.ssf_year == 2016) & (frame.worker_class == "female_worker") & (frame.entry_age == 18)]
        self.assertTrue(math.isnan(female_2016.nra.iloc[0]))
        self.assertIn("48", female_2016.error.iloc[0])

    def test_expectancy_comparison_equals_factor_discrepancy(self):
        frame = metrics.expectancy_comparison([2010], CATALOG)
        self.assertEqual(len(frame), 38)
        row = frame[frame.age == 60].iloc[0]
        self.assertAlmostEqual(row.discrepancy, (21.4 / 20.8 - 1) * 100)
        comparison = metrics.compare(
            2012, CATALOG.source("official", 2010), CATALOG.source("ggm", 2010), [60], [40], WorkerClass.MALE_WORKER, CONFIG
        )
        self.assertAlmostEqual(comparison.discrepancy[0, 0], row.discrepancy, delta=1e-9)
        self.assertTrue(math.isnan(frame[frame.age == 80].discrepancy.iloc[0]))

    def test_plot_series(self):
        frame = metrics.plot_series([2010, 2013], CATALOG, ages=(50, 65))
        self.assertEqual(list(frame.columns), ["year", "age", "value", "source"])
        rows = {(r.year, r.age, r.source) for r in frame.itertuples()}
        self.assertIn((2013, 65, "official"), rows)
        self.assertIn((2010, 50, "ggm"), rows)
        self.assertNotIn((2010, 65, "official"), rows)


if __name__ == "__main__":
    unittest.main()

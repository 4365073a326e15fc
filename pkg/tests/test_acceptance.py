"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line (also collected in the pytest
terminal summary) and asserts the same outcome.
"""

import numpy as np
import pytest

from stefan_control import experiments as ex
from stefan_control.cli import main

SEED = 0


def test_criterion_1_forward_accuracy(record_criterion):
    st = ex.forward_study()
    assert record_criterion(1, st.checks(), f"errors={['%.3g' % e for e in st.errors]}")


def test_criterion_2_duality(record_criterion):
    st = ex.duality_study(ex.rng_for(SEED, 2), count=20)
    assert len(st.matched_gaps) == 20
    assert record_criterion(2, st.checks())


def test_criterion_3_null_control(record_criterion):
    st = ex.hum_study(SEED, count=20)
    assert len(st.terminal_rel) == 20
    assert record_criterion(3, st.checks())


def test_criterion_4_carleman(record_criterion):
    st = ex.carleman_study(SEED, datasets=10)
    assert all(len(sw.rows) == 6 for sw in st.sweeps)
    assert record_criterion(4, st.checks(), f"C0={['%.3g' % c for c in st.C0]}")


def test_criterion_5_nonlinear_control(record_criterion):
    st = ex.nonlinear_study(delta=1e-2)
    assert record_criterion(5, st.checks(), f"T=2, analytic front gap {st.analytic_ell_gap:.2g}")


def test_criterion_6_quadratic_remainder(record_criterion):
    st = ex.deviation_study(eps=(1e-1, 1e-2, 1e-3))
    assert record_criterion(6, st.checks())


def test_criterion_7_weight_bounds(record_criterion):
    st = ex.weight_study(lam_factors=(1, 2, 4))
    assert record_criterion(7, st.checks())


def test_criterion_8_determinism(tmp_path, record_criterion):
    args = ["verify-all", "--out", str(tmp_path), "--seed", str(SEED)]
    codes = [main(args), main(args)]
    a, b = sorted(tmp_path.iterdir())
    names = sorted(p.name for p in a.iterdir())
    same = names == sorted(p.name for p in b.iterdir()) and all(
        (a / n).read_bytes() == (b / n).read_bytes() for n in names)
    check = ex.Check(8, "identical_outputs", float(same), 1.0, ">=")
    assert record_criterion(8, [check], f"exit codes {codes}, {len(names)} files")
    assert codes == [0, 0]

from fractions import Fraction
from math import comb

from robust_oed.polynomials import HERMITE


def raw_moment(fam, k):
    """Exact E[xi^k] under the probability measure of ``fam``."""
    if fam.kind == HERMITE:
        if k % 2:
            return 0.0
        out = 1
        for j in range(1, k, 2):
            out *= j
        return float(out)
    a, b = fam._ab()
    alpha, beta = Fraction(b) + 1, Fraction(a) + 1  # xi = 2 B - 1, B ~ Beta(alpha, beta)
    total = Fraction(0)
    for j in range(k + 1):
        mb = Fraction(1)
        for r in range(j):
            mb *= (alpha + r) / (alpha + beta + r)
        total += comb(k, j) * Fraction(2) ** j * Fraction(-1) ** (k - j) * mb
    return float(total)


# acceptance verdicts, one line per criterion, echoed after the test summary
VERDICTS = {}


def record_verdict(number, ok, detail):
    VERDICTS[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")

"""One test per acceptance criterion; each prints a single PASS/FAIL line
with the measured values and the pinned tolerance."""

import pytest

from ccgeo import acceptance as AC

ORDER = list(AC.CRITERIA)  # already in criterion order


@pytest.mark.slow
@pytest.mark.parametrize("name", ORDER)
def test_criterion(name, capsys):
    res = AC.run_criterion(name)
    with capsys.disabled():
        print("\n" + res.line(), flush=True)
    assert res.passed, res.summary

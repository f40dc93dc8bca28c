"""One test per acceptance criterion, each at its stated tolerance.

Each test records ``criterion N (title): PASS|FAIL`` for the terminal summary and
prints its table rows.
"""

import pytest

from klopt.acceptance import CRITERIA, format_rows, run_criterion


@pytest.mark.parametrize("cid", list(CRITERIA))
def test_criterion(cid, criterion_log):
    crit = CRITERIA[cid]
    rows = run_criterion(crit)
    ok = all(r.passed for r in rows)
    line = f"criterion {cid} ({crit.title}): {'PASS' if ok else 'FAIL'}"
    criterion_log.append(line)
    print(line)
    print(format_rows(rows))
    failed = [f"{r.check}: observed {r.observed} vs predicted {r.predicted} (tol {r.tolerance})"
              for r in rows if not r.passed]
    assert ok, "; ".join(failed)

"""Shared pytest plumbing.

The acceptance tests are named ``test_criterion_<n>_*``; after the run a
summary section prints one PASS/FAIL line per criterion so the verdicts
are readable without digging through the full log.
"""

import re

CRITERIA = {
    1: "trust deltas exact (reward +8, penalty -2, blame -8, ban -16, interested +1)",
    2: "analytic gradient matches central differences, 100 seeds, rel err <= 1e-4, < 10 s",
    3: "sync aggregation == brute-force weighted mean within 1e-12; async single client == sync",
    4: "trend: (B=10,E=20) >= (B=20,E=5) at round 30, both 5-round-MA nondecreasing, >= 8/10 seeds, < 5 min",
    5: "trend: round-20 accuracy with 0 stragglers >= with 4, >= 8/10 seeds",
    6: "defense: >= 95% poisoner submissions gate-rejected, trust separated by round 10, > 2-point cost when off",
    7: "trust trajectory shapes on a scripted 15-round scenario (via trust.csv)",
    8: "same seed -> byte-identical CSVs; parallel == serial",
    9: "selection chain M <= C <= S <= RA and weight sums over 1000 fuzzed rounds",
}

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    verdicts = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if not match:
                continue
            n = int(match.group(1))
            if outcome == "passed":
                verdicts.setdefault(n, "PASS")
            else:
                verdicts[n] = "FAIL"
    if not verdicts:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(
            f"criterion {n}: {verdicts[n]} - {CRITERIA.get(n, '')}"
        )

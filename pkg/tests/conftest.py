def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import CHECKS, RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n} ({CHECKS[n][0]}): {detail}")

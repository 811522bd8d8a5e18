def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(verdicts):
        terminalreporter.write_line(verdicts[number])

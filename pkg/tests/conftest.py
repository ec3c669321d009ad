from test_acceptance import RESULT_LINES


def pytest_terminal_summary(terminalreporter):
    if RESULT_LINES:
        terminalreporter.section("release checks")
        for number in sorted(RESULT_LINES):
            terminalreporter.write_line(RESULT_LINES[number])

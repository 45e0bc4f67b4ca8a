from _criteria import LINES


def pytest_terminal_summary(terminalreporter):
    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(LINES):
        terminalreporter.write_line(line)

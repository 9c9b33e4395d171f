def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains real models (minutes to hours on one core)")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)

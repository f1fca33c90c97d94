from hypothesis import settings

# reproducible property runs; equilibrium solves have no fixed latency
settings.register_profile("default", derandomize=True, deadline=None, max_examples=40)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria on desk-scale sweeps (slow)")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)

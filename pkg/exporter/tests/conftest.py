import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    """Echo the export parity checklist collected by test_export.py."""
    results = sys.modules.get("test_export")
    if results is None or not getattr(results, "RESULTS", None):
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("exporter criteria:")
    for line in results.RESULTS:
        terminalreporter.write_line("  " + line)

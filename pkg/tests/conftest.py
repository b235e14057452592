import pytest

_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
  """Record one acceptance criterion's outcome; the summary prints it."""
  def record(number: int, ok: bool, detail: str) -> bool:
    _CRITERIA[number] = (bool(ok), detail)
    print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)
  return record


def pytest_terminal_summary(terminalreporter):
  if not _CRITERIA:
    return
  terminalreporter.section("acceptance criteria")
  for n in sorted(_CRITERIA):
    ok, detail = _CRITERIA[n]
    terminalreporter.write_line(
        f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

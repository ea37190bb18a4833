import pytest

from gibbsnls.bessel_disc import build_basis


@pytest.fixture(scope="session")
def basis8():
    return build_basis(8)


@pytest.fixture(scope="session")
def basis16():
    return build_basis(16)


@pytest.fixture(scope="session")
def basis64():
    return build_basis(64)


@pytest.fixture(scope="session")
def basis200():
    return build_basis(200)


@pytest.fixture
def verdict(request):
    """Record one acceptance sub-check; the terminal summary folds them per criterion."""
    store = request.config.stash.setdefault(_ACCEPT, {})

    def record(criterion, part, ok, detail=""):
        store.setdefault(criterion, []).append((part, bool(ok), detail))
        return bool(ok)

    return record


_ACCEPT = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPT, None)
    if not store:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(store):
        parts = store[k]
        ok = all(p[1] for p in parts)
        tr.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}")
        for part, good, detail in parts:
            tr.write_line(f"    {'PASS' if good else 'FAIL'}  {part}" + (f"  [{detail}]" if detail else ""))

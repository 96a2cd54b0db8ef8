import pytest

from headradar.dielectrics import build_head_stack, default_tissue_db


@pytest.fixture(scope="session")
def db():
    return default_tissue_db()


@pytest.fixture(scope="session")
def tissues(db):
    return {r.name: r for r in db}


@pytest.fixture(scope="session")
def head(db):
    return build_head_stack(db)


@pytest.fixture(scope="session")
def patch_report(db):
    from headradar.experiments import tumor_experiment

    return tumor_experiment(db, "patch-like")


@pytest.fixture(scope="session")
def patch_null_report(db):
    from headradar.experiments import TumorSpec, tumor_experiment

    return tumor_experiment(db, "patch-like", TumorSpec(null_contrast=True))


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

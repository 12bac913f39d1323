import numpy as np
import pytest

from actpv.data import FeatureSchema, Dataset, gen_synthetic_binary, load_movielens_dir, write_synthetic_movielens
from actpv.nn import EmbeddingSpec, ModelSpec


@pytest.fixture(scope="session")
def ml_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ml")
    write_synthetic_movielens(d, n_ratings=3000, n_users=120, n_movies=90, seed=5)
    return d


@pytest.fixture(scope="session")
def ml_data(ml_dir):
    return load_movielens_dir(ml_dir)


@pytest.fixture(scope="session")
def binary_data():
    return gen_synthetic_binary(1500, seed=3)


def small_spec(task_kind="regression", hidden=(4, 3), n_classes=0, temperature=1.0, **kw):
    embs = (EmbeddingSpec("a", 5, 2), EmbeddingSpec("b", 3, 3))
    return ModelSpec(task_kind, embs, 2, hidden, n_classes=n_classes, temperature=temperature, **kw)


def random_batch(rng, spec, n):
    cat = np.stack([rng.integers(0, e.vocab_size, size=n) for e in spec.embedding_specs], axis=1) \
        if spec.embedding_specs else np.zeros((n, 0), dtype=np.int64)
    num = rng.normal(size=(n, spec.n_numeric))
    if spec.task_kind == "regression":
        y = rng.normal(size=n)
    elif spec.task_kind == "binary":
        y = rng.integers(0, 2, size=n).astype(float)
    else:
        y = rng.integers(0, spec.n_classes, size=n).astype(float)
    return cat, num, y


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def acceptance_report():
    """Record one pass/fail line for an acceptance check; lines print in the terminal summary."""
    def record(index: int, title: str, passed: bool, detail: str) -> None:
        line = f"[{index:>2}/11] {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES[index] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

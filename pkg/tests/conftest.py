import os

import pytest

from cubegof.store import TableStore

# Null-uniformity checks push n-fold combiners through the tables, so the
# table CDF bias must stay well below the 0.01 tolerance: ~7e-4 at 4e6.
DISCOVERY_TRIALS = 4_000_000


@pytest.fixture(scope="session")
def store(tmp_path_factory):
    """Shared null-table store for the whole run.

    Point CUBEGOF_TEST_TABLES at a persistent directory to reuse tables
    across runs; by default everything builds into a session temp dir.
    """
    root = os.environ.get("CUBEGOF_TEST_TABLES")
    if not root:
        root = tmp_path_factory.mktemp("tables")
    return TableStore(root, seed=0)


def ensure_discovery_tables(store, ms=(20, 100, 1000)):
    for m in ms:
        store.count_table("ks", m, trials=DISCOVERY_TRIALS)


def ensure_surface(store, n, test_id="pcs", trials=50_000):
    """Correction surface for (test_id, n), building and persisting on miss."""
    from cubegof import limits
    from cubegof.errors import TableMissingError

    try:
        return store.surface(test_id, n)
    except TableMissingError:
        surface = limits.calibrate_correction(store, n, test_id, trials=trials)
        store.put_surface(surface)
        return surface

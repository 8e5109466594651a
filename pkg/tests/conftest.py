import random

import pytest

from iconfluence.state import (
    DatabaseState,
    Version,
    collection_event,
    counter_event,
    tombstone,
)


def version_pool(seed: int = 7, size: int = 40) -> list[Version]:
    """A deterministic pool of mergeable versions: states drawn as subsets
    of one pool can never disagree on a version's content."""
    rng = random.Random(seed)
    pool: list[Version] = []
    for i in range(size):
        writer = f"w{i}"
        replica = f"r{rng.randrange(4)}"
        ts = rng.randrange(1, 30)
        kind = rng.randrange(4)
        if kind == 0:
            pool.append(Version.make(f"row:{rng.randrange(8)}", writer, 0,
                                     replica, ts, {"v": rng.randrange(100)}))
        elif kind == 1:
            op = rng.choice(["inc", "dec"])
            pool.append(counter_event(f"ctr:{rng.randrange(3)}", op, writer, 0,
                                      replica, ts, rng.randrange(1, 4)))
        elif kind == 2:
            op = rng.choice(["add", "del"])
            pool.append(collection_event(f"coll:{rng.randrange(3)}", op,
                                         f"e{rng.randrange(6)}", writer, 0,
                                         replica, ts))
        else:
            pool.append(tombstone(f"row:{rng.randrange(8)}", writer, 0, replica, ts))
    return pool


@pytest.fixture(scope="session")
def pool() -> list[Version]:
    return version_pool()


def random_subset_state(rng: random.Random, pool: list[Version],
                        max_size: int = 12) -> DatabaseState:
    k = rng.randrange(0, max_size + 1)
    return DatabaseState(frozenset(rng.sample(pool, min(k, len(pool)))))

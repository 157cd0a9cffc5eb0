import numpy as np

# Stream keys for the independent draws made from one run seed.
PATH_STREAM = 0
ARRIVAL_STREAM = 1
INCREMENT_STREAM = 2
TABLE_STREAM = 3
ORACLE_STREAM = 4
RESAMPLE_STREAM = 5


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``key`` under ``seed``.

    Streams are addressed by position rather than spawned in sequence, so a
    batch or block always receives the same stream no matter how many
    workers process the batches.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def derive_seed(seed: int, *key: int) -> int:
    """Integer seed for the stream identified by ``key``."""
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])

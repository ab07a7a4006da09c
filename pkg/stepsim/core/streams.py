import numpy as np


def make_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based noise stream for one work unit.

    The stream is fully determined by the experiment seed and the unit key
    (trajectory index, probe index, ...), so units can run in any order or
    process and still reproduce bit-for-bit.
    """
    sequence = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))

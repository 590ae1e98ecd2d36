"""
Named random streams.

All randomness derives from one integer seed. A stream is addressed by a path
of names (``"fold", 2, "model", "rf", "tree", 17``) so that the numbers a grid
cell sees do not depend on which other cells ran, or in which order.
"""

import hashlib

import numpy as np


def _key_part(name: object) -> int:
    digest = hashlib.sha256(str(name).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def derive_seed_sequence(seed: int, *names: object) -> np.random.SeedSequence:
    """Seed sequence for the stream addressed by ``names`` under ``seed``."""
    return np.random.SeedSequence(
        entropy=seed,
        spawn_key=tuple(_key_part(name) for name in names),
    )


def derive_rng(seed: int, *names: object) -> np.random.Generator:
    """
    Random generator for a named stream.

    Args:
        seed: Run seed.
        *names: Stream path, e.g. ``("fold", 1, "model", "dnn_net")``.

    Returns:
        np.random.Generator: Independent, reproducible generator.
    """
    return np.random.default_rng(derive_seed_sequence(seed, *names))


def derive_int_seed(seed: int, *names: object) -> int:
    """Integer seed for a named stream, for handing to a sub-run."""
    return int(derive_seed_sequence(seed, *names).generate_state(1)[0])

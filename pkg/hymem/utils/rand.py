import zlib
import typing as T

import numpy as np


def _key_to_int(key: T.Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    return int(key)


def derive_seed(seed: int, *keys: T.Union[int, str]) -> int:
    """A 32-bit seed derived from ``seed`` and a tuple of keys.

    Every consumer of randomness draws from its own derived stream, so
    switching one feature off does not shift the numbers another
    feature sees.
    """
    ss = np.random.SeedSequence([int(seed)] + [_key_to_int(k) for k in keys])
    return int(ss.generate_state(1)[0])


def derive_rng(seed: int, *keys: T.Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))

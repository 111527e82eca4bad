from __future__ import annotations

import numpy as np


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(dims, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights for a ``(fan_in, fan_out)`` matrix."""
    if len(dims) != 2:
        raise ValueError(f"xavier_init expects 2D (fan_in, fan_out) dims, got {list(dims)}")
    fan_in, fan_out = int(dims[0]), int(dims[1])
    bound = xavier_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))

"""Named parameter storage, initialisers and checkpoint files."""

from __future__ import annotations

import json
import sys
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import Tensor

CHECKPOINT_FORMAT = "ftscomm-params"
CHECKPOINT_VERSION = 1


def xavier_uniform(shape, rng, gain=1.0):
    shape = tuple(shape)
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        receptive = int(np.prod(shape[2:])) if len(shape) > 2 else 1
        fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    bound = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def orthogonal(shape, rng):
    """Row-blockwise orthogonal init for recurrent (4h, h) matrices."""
    rows, cols = shape
    blocks = []
    for _ in range(int(np.ceil(rows / cols))):
        q, r = np.linalg.qr(rng.standard_normal((cols, cols)))
        blocks.append(q * np.sign(np.diag(r)))
    return np.concatenate(blocks, axis=0)[:rows]


class ParamStore:
    """Ordered mapping of parameter name -> trainable :class:`Tensor`.

    Every key is registered exactly once; shapes are fixed at registration.
    """

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ValueError(f"parameter {name!r} has non-finite values")
        t = Tensor(value.copy(), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def n_values(self):
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state(self):
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state):
        for k, v in state.items():
            if k not in self._params:
                raise KeyError(f"unknown parameter {k!r}")
            if self._params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k!r}: {self._params[k].shape} vs {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=np.float64, copy=True)

    # -- checkpoint IO ----------------------------------------------------
    def save(self, path):
        payload = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            # values are written as JSON decimals (repr round-trips float64),
            # so byte order only matters to consumers that re-pack them
            "byte_order": sys.byteorder,
            "dtype": "float64",
            "params": {
                k: {"shape": list(t.shape), "values": t.data.ravel().tolist()}
                for k, t in self._params.items()
            },
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path):
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a parameter checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
        store = cls()
        for k, entry in payload["params"].items():
            store.add(k, np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"]))
        return store

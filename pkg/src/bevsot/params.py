"""Named parameter store, AdamW with decoupled weight decay, the step-decay
learning-rate schedule, and the binary checkpoint format.

Checkpoint layout (little-endian): magic ``BSOT``, u32 version, u32 count,
then per parameter: u16 name length + utf-8 name, u8 ndim, u32 dims,
row-major float64 data.
"""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .exceptions import ConfigError, DataFormatError
from .tensor import Tensor

_MAGIC = b"BSOT"
_VERSION = 1


class _AdamState:
    __slots__ = ("m", "v", "step")

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.step = 0


class ParamStore:
    """Insertion-ordered map name -> trainable Tensor plus optimizer state.

    Names are unique and shapes are immutable after creation; iteration
    order is creation order, which keeps optimizer updates deterministic.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._state: dict[str, _AdamState] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name '{name}'")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._state[name] = _AdamState(t.data.shape)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def num_values(self, prefix: str = "") -> int:
        """Total scalar parameter count, optionally under a name prefix."""
        return sum(t.data.size for n, t in self._params.items() if n.startswith(prefix))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for name, t in self._params.items():
            other.create(name, t.data.copy())
            st, ot = self._state[name], other._state[name]
            ot.m[...] = st.m
            ot.v[...] = st.v
            ot.step = st.step
        return other


def adamw_step(store: ParamStore, lr: float, weight_decay: float = 0.01,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    """One decoupled-weight-decay Adam update over every parameter.

    Requires grads populated for all parameters; increments per-parameter
    step counts. Grads are left in place (call ``store.zero_grad()``).
    """
    b1, b2 = betas
    for name, p in store.items():
        if p.grad is None:
            raise ValueError(f"adamw_step: parameter '{name}' has no gradient")
        st = store._state[name]
        st.step += 1
        st.m = b1 * st.m + (1.0 - b1) * p.grad
        st.v = b2 * st.v + (1.0 - b2) * (p.grad * p.grad)
        mhat = st.m / (1.0 - b1 ** st.step)
        vhat = st.v / (1.0 - b2 ** st.step)
        p.data = p.data - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p.data)


def lr_at_epoch(base_lr: float, epoch: int, decay_factor: float = 5.0,
                decay_interval: int = 20) -> float:
    """Step schedule: divide the rate by `decay_factor` every `decay_interval` epochs."""
    return base_lr / decay_factor ** (epoch // decay_interval)


def save_checkpoint(store: ParamStore, path: str):
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(store)))
        for name, t in store.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(store: ParamStore, path: str):
    """Load values into an existing store; every name and shape must match."""
    entries = read_checkpoint(path)
    missing = set(store.names()) - set(entries)
    extra = set(entries) - set(store.names())
    if missing or extra:
        raise ConfigError(
            f"checkpoint/model mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, arr in entries.items():
        t = store[name]
        if arr.shape != t.data.shape:
            raise ConfigError(
                f"checkpoint shape mismatch for '{name}': {arr.shape} vs {t.data.shape}")
        t.data = arr


def read_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()

    def fail(offset, why):
        raise DataFormatError(f"{path}: byte {offset}: {why}")

    if blob[:4] != _MAGIC:
        fail(0, "bad magic (not a checkpoint)")
    if len(blob) < 12:
        fail(len(blob), "truncated header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        fail(4, f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        if off + 2 > len(blob):
            fail(off, "truncated name length")
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + nlen + 1 > len(blob):
            fail(off, "truncated name")
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        ndim = blob[off]
        off += 1
        if off + 4 * ndim > len(blob):
            fail(off, "truncated shape")
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        nbytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
        if off + nbytes > len(blob):
            fail(off, f"truncated data for '{name}'")
        out[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8,
                                  offset=off).reshape(shape).astype(np.float64)
        off += nbytes
    if off != len(blob):
        fail(off, "trailing bytes after last parameter")
    return out

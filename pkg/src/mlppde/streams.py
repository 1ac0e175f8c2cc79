"""Keyed, splittable random streams indexed by integer paths.

Every random quantity used by the solvers is a pure function of
``(root_seed, path, slot, j)``; there is no sequential generator state.
A key carries a 128-bit state (two 64-bit lanes) obtained by folding the
path components into the root state one at a time.

Mixing function (all arithmetic modulo 2**64)::

    fmix(z)    = SplitMix64 finalizer:
                 z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
                 z ^= z >> 27; z *= 0x94D049BB133111EB
                 z ^= z >> 31
    root(s)    = (a, fmix(a ^ PI)),  a = fmix(s + GAMMA)
    child(k, c) with c taken as two's-complement 64-bit:
                 m  = fmix(c * GAMMA + PHI)
                 a' = fmix(k0 ^ m)
                 b' = fmix(k1 + rotl(m, 29)) ^ a'
    word(k, ctr) = fmix(fmix((ctr + 1) * GAMMA + k1) ^ k0)
    ctr        = (slot << 32) | j

Uniforms are ``((word >> 12) + 0.5) * 2**-52``, which lies strictly inside
(0, 1); normals are the inverse normal CDF of such a uniform, one uniform
per normal.  Coordinate ``j`` of a Gaussian vector uses counter ``j`` of
its slot, so the first ``d`` coordinates do not depend on ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtri

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
PI64 = 0x243F6A8885A308D3
PHI = 0xB7E151628AED2A6A
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB
_TWO_M52 = 2.0**-52

_U = np.uint64
_GAMMA_U = _U(GAMMA)
_PHI_U = _U(PHI)
_C1_U = _U(_C1)
_C2_U = _U(_C2)


def _fmix(z: int) -> int:
    z ^= z >> 30
    z = (z * _C1) & MASK64
    z ^= z >> 27
    z = (z * _C2) & MASK64
    return z ^ (z >> 31)


def _rotl(z: int, r: int) -> int:
    return ((z << r) | (z >> (64 - r))) & MASK64


def _root_state(seed: int) -> tuple[int, int]:
    a = _fmix((seed + GAMMA) & MASK64)
    return a, _fmix(a ^ PI64)


def _child_state(state: tuple[int, int], component: int) -> tuple[int, int]:
    k0, k1 = state
    m = _fmix(((component & MASK64) * GAMMA + PHI) & MASK64)
    a = _fmix(k0 ^ m)
    b = _fmix((k1 + _rotl(m, 29)) & MASK64) ^ a
    return a, b


def _word(state: tuple[int, int], counter: int) -> int:
    k0, k1 = state
    return _fmix(_fmix(((counter + 1) * GAMMA + k1) & MASK64) ^ k0)


# numpy twins of the scalar mixers; uint64 array arithmetic wraps modulo 2**64


def _fmix_np(z: np.ndarray) -> np.ndarray:
    # 0-d operands go through numpy's scalar path, which warns on wraparound
    with np.errstate(over="ignore"):
        z = z ^ (z >> _U(30))
        z = z * _C1_U
        z = z ^ (z >> _U(27))
        z = z * _C2_U
        return z ^ (z >> _U(31))


def _rotl_np(z: np.ndarray, r: int) -> np.ndarray:
    return (z << _U(r)) | (z >> _U(64 - r))


def _as_u64(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype == np.uint64:
        return arr
    # two's complement view keeps negative components distinct from positive ones
    return np.asarray(arr, dtype=np.int64).astype(np.uint64)


@dataclass(frozen=True)
class StreamKey:
    """Identifier of one element of the index set of finite integer tuples.

    ``path`` is the tuple of components; ``state`` is the derived 128-bit
    mixing state and is computed on construction when omitted.
    """

    root_seed: int
    path: tuple[int, ...] = ()
    state: tuple[int, int] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.root_seed) <= MASK64:
            raise ValueError(f"root_seed must be a 64-bit unsigned value, got {self.root_seed}")
        object.__setattr__(self, "root_seed", int(self.root_seed))
        object.__setattr__(self, "path", tuple(int(c) for c in self.path))
        if self.state is None:
            state = _root_state(self.root_seed)
            for c in self.path:
                state = _child_state(state, c)
            object.__setattr__(self, "state", state)

    def derive(self, *components: int) -> "StreamKey":
        state = self.state
        for c in components:
            state = _child_state(state, int(c))
        return StreamKey(self.root_seed, self.path + tuple(int(c) for c in components), state)

    def as_array(self) -> np.ndarray:
        return np.array([self.state], dtype=np.uint64)


def derive(key: StreamKey, component: int) -> StreamKey:
    """Extend ``key``'s path by one component."""
    return key.derive(component)


def uniform01(key: StreamKey, slot: int, ledger=None) -> float:
    if ledger is not None:
        ledger.scalar_draws += 1
    return ((_word(key.state, slot << 32) >> 12) + 0.5) * _TWO_M52


def gaussian_vector(key: StreamKey, slot: int, d: int, ledger=None) -> np.ndarray:
    """``d`` independent standard normals determined by ``(key, slot)``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return gaussians(key.as_array(), slot, d, ledger)[0]


# --- batched forms: states are uint64 arrays with a trailing axis of length 2


def states_of(keys: StreamKey | Sequence[StreamKey] | np.ndarray) -> np.ndarray:
    """Stack key states into an ``(B, 2)`` uint64 array."""
    if isinstance(keys, StreamKey):
        return keys.as_array()
    if isinstance(keys, np.ndarray):
        if keys.dtype != np.uint64 or keys.shape[-1] != 2:
            raise ValueError("state arrays must be uint64 with a trailing axis of length 2")
        return keys.reshape(-1, 2)
    return np.array([k.state for k in keys], dtype=np.uint64).reshape(-1, 2)


def derive_states(states: np.ndarray, components) -> np.ndarray:
    """Vectorized ``child``: broadcasts ``states[..., 2]`` against ``components``."""
    comp = _as_u64(components)
    k0 = states[..., 0]
    k1 = states[..., 1]
    with np.errstate(over="ignore"):
        m = _fmix_np(comp * _GAMMA_U + _PHI_U)
        a = _fmix_np(k0 ^ m)
        b = _fmix_np(k1 + _rotl_np(m, 29)) ^ a
    return np.stack(np.broadcast_arrays(a, b), axis=-1)


def child_states(key: StreamKey, components: Iterable[int]) -> np.ndarray:
    """States of ``key.derive(c)`` for every ``c``, shape ``(len(components), 2)``."""
    comps = np.fromiter((int(c) for c in components), dtype=np.int64)
    return derive_states(key.as_array(), comps)


def _words(states: np.ndarray, counters: np.ndarray) -> np.ndarray:
    k0 = states[..., 0]
    k1 = states[..., 1]
    with np.errstate(over="ignore"):
        return _fmix_np(_fmix_np((counters + _U(1)) * _GAMMA_U + k1) ^ k0)


def _to_unit(words: np.ndarray) -> np.ndarray:
    return ((words >> _U(12)).astype(np.float64) + 0.5) * _TWO_M52


def uniforms(states: np.ndarray, slot: int, ledger=None) -> np.ndarray:
    """One uniform per state, shape ``states.shape[:-1]``."""
    words = _words(states, _U(slot << 32))
    if ledger is not None:
        ledger.scalar_draws += words.size
    return _to_unit(words)


def gaussians(states: np.ndarray, slot: int, d: int, ledger=None) -> np.ndarray:
    """``d`` standard normals per state, shape ``states.shape[:-1] + (d,)``."""
    counters = _U(slot << 32) + np.arange(d, dtype=np.uint64)
    words = _words(states[..., None, :], counters)
    if ledger is not None:
        ledger.scalar_draws += words.size
    return ndtri(_to_unit(words))

"""Deterministic, splittable random streams.

Every mask draw in this package is a pure function of a :class:`StreamKey`
(seed, layer, sample, adapter).  The derivation is fixed bit-for-bit so that
independent implementations in other languages reproduce identical masks:

* The four key fields are mixed through the splitmix64 finalizer in field
  order: ``state = mix(state + field)`` with ``state`` starting at zero and
  all arithmetic modulo 2**64.
* The mixed state seeds a splitmix64 generator whose first four outputs
  become the 256-bit state of a xoshiro256++ sequence.
* Uniform doubles in [0, 1) take the top 53 bits of each 64-bit output,
  divided by 2**53.  A Bernoulli(q) draw is 1 iff the uniform is < q.

Three implementations of the same sequence live here: a scalar pure-Python
reference (:class:`Stream`), a vectorized numpy path, and a numba kernel for
tight per-call latency.  The test suite pins all three to identical bits.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_MUL1 = 0xBF58476D1CE4E5B9
_MIX_MUL2 = 0x94D049BB133111EB
_INV_2_53 = 2.0**-53


def splitmix64_mix(z: int) -> int:
    """splitmix64 finalizer on a 64-bit value."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX_MUL1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX_MUL2) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class StreamKey:
    """Addresses one random stream within the (seed, layer, sample, adapter) lattice."""

    seed: int
    layer_index: int = 0
    sample_index: int = 0
    adapter_index: int = 0

    def __post_init__(self) -> None:
        for field in ("seed", "layer_index", "sample_index", "adapter_index"):
            value = getattr(self, field)
            if not isinstance(value, int) or not 0 <= value <= _MASK64:
                raise ValueError(f"{field} must be an unsigned 64-bit integer, got {value!r}")


def derive_state(key: StreamKey) -> int:
    """Chained splitmix64 mix of the four key fields, in field order."""
    state = 0
    for field in (key.seed, key.layer_index, key.sample_index, key.adapter_index):
        state = splitmix64_mix((state + field) & _MASK64)
    return state


class Stream:
    """Scalar xoshiro256++ stream; the bit-exact reference implementation.

    Not safe for concurrent draws from multiple threads; derive one stream
    per concurrent task instead.
    """

    __slots__ = ("_s0", "_s1", "_s2", "_s3")

    def __init__(self, state: int) -> None:
        # splitmix64 expansion of the 64-bit state into the 256-bit xoshiro state
        words = []
        z = state & _MASK64
        for _ in range(4):
            z = (z + _GOLDEN) & _MASK64
            words.append(splitmix64_mix(z))
        self._s0, self._s1, self._s2, self._s3 = words

    def next_uint64(self) -> int:
        s0, s1, s2, s3 = self._s0, self._s1, self._s2, self._s3
        tmp = (s0 + s3) & _MASK64
        result = ((((tmp << 23) | (tmp >> 41)) & _MASK64) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        self._s0, self._s1, self._s2, self._s3 = s0, s1, s2, s3
        return result

    def next_double(self) -> float:
        return (self.next_uint64() >> 11) * _INV_2_53

    def bernoulli(self, q: float) -> int:
        return 1 if self.next_double() < q else 0


def derive_stream(key: StreamKey) -> Stream:
    """Deterministic stream for a key; identical keys yield identical streams."""
    return Stream(derive_state(key))


# --- vectorized paths ------------------------------------------------------
#
# numpy uint64 arithmetic wraps modulo 2**64, matching the scalar reference.

_U = np.uint64


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U(30))) * _U(_MIX_MUL1)
    z = (z ^ (z >> _U(27))) * _U(_MIX_MUL2)
    return z ^ (z >> _U(31))


def derive_states(
    seed: int,
    layer_index: int,
    sample_indices: Sequence[int] | np.ndarray,
    adapter_indices: Sequence[int] | np.ndarray,
) -> np.ndarray:
    """Mixed 64-bit states for the cross product rows (sample_i, adapter_i).

    ``sample_indices`` and ``adapter_indices`` must have equal length; entry
    ``t`` of the result is ``derive_state(StreamKey(seed, layer_index,
    sample_indices[t], adapter_indices[t]))``.
    """
    samples = np.asarray(sample_indices, dtype=np.uint64)
    adapters = np.asarray(adapter_indices, dtype=np.uint64)
    if samples.shape != adapters.shape:
        raise ValueError("sample_indices and adapter_indices must have equal length")
    state = np.zeros(samples.shape, dtype=np.uint64)
    for field in (np.full(samples.shape, seed, np.uint64),
                  np.full(samples.shape, layer_index, np.uint64),
                  samples,
                  adapters):
        state = _mix_array(state + field)
    return state


def states_for_keys(keys: Sequence[StreamKey]) -> np.ndarray:
    return np.array([derive_state(k) for k in keys], dtype=np.uint64)


def _expand_states(states: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    words = []
    z = states.astype(np.uint64)
    for _ in range(4):
        z = z + _U(_GOLDEN)
        words.append(_mix_array(z))
    return words[0], words[1], words[2], words[3]


def _uniform_matrix_numpy(states: np.ndarray, count: int) -> np.ndarray:
    s0, s1, s2, s3 = _expand_states(states)
    out = np.empty((states.shape[0], count), dtype=np.float64)
    for i in range(count):
        tmp = s0 + s3
        result = ((tmp << _U(23)) | (tmp >> _U(41))) + s0
        t = s1 << _U(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = (s3 << _U(45)) | (s3 >> _U(19))
        out[:, i] = (result >> _U(11)).astype(np.float64) * _INV_2_53
    return out


def _bernoulli_matrix_numpy(states: np.ndarray, qs: np.ndarray, count: int) -> np.ndarray:
    return (_uniform_matrix_numpy(states, count) < qs[:, None]).astype(np.uint8)


_JIT_DISABLED = os.environ.get("ORTHMERGE_NO_JIT", "") not in ("", "0")
_jit_kernels = None

if not _JIT_DISABLED:
    try:
        from numba import njit, uint64, uint8

        @njit(cache=True, nogil=True)
        def _jit_mix(z):
            z = (z ^ (z >> uint64(30))) * uint64(_MIX_MUL1)
            z = (z ^ (z >> uint64(27))) * uint64(_MIX_MUL2)
            return z ^ (z >> uint64(31))

        @njit(cache=True, nogil=True)
        def _jit_uniform_matrix(states, count):
            n = states.shape[0]
            out = np.empty((n, count), dtype=np.float64)
            for t in range(n):
                z = states[t] + uint64(_GOLDEN)
                s0 = _jit_mix(z)
                z = z + uint64(_GOLDEN)
                s1 = _jit_mix(z)
                z = z + uint64(_GOLDEN)
                s2 = _jit_mix(z)
                z = z + uint64(_GOLDEN)
                s3 = _jit_mix(z)
                for i in range(count):
                    tmp = s0 + s3
                    r = ((tmp << uint64(23)) | (tmp >> uint64(41))) + s0
                    t17 = s1 << uint64(17)
                    s2 ^= s0
                    s3 ^= s1
                    s1 ^= s2
                    s0 ^= s3
                    s2 ^= t17
                    s3 = (s3 << uint64(45)) | (s3 >> uint64(19))
                    out[t, i] = np.float64(r >> uint64(11)) * _INV_2_53
            return out

        @njit(cache=True, nogil=True)
        def _jit_bernoulli_matrix(states, qs, count):
            n = states.shape[0]
            out = np.empty((n, count), dtype=np.uint8)
            for t in range(n):
                z = states[t] + uint64(_GOLDEN)
                s0 = _jit_mix(z)
                z = z + uint64(_GOLDEN)
                s1 = _jit_mix(z)
                z = z + uint64(_GOLDEN)
                s2 = _jit_mix(z)
                z = z + uint64(_GOLDEN)
                s3 = _jit_mix(z)
                q = qs[t]
                for i in range(count):
                    tmp = s0 + s3
                    r = ((tmp << uint64(23)) | (tmp >> uint64(41))) + s0
                    t17 = s1 << uint64(17)
                    s2 ^= s0
                    s3 ^= s1
                    s1 ^= s2
                    s0 ^= s3
                    s2 ^= t17
                    s3 = (s3 << uint64(45)) | (s3 >> uint64(19))
                    u = np.float64(r >> uint64(11)) * _INV_2_53
                    out[t, i] = uint8(1) if u < q else uint8(0)
            return out

        _jit_kernels = (_jit_uniform_matrix, _jit_bernoulli_matrix)
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _jit_kernels = None


def uniform_matrix(states: np.ndarray, count: int, use_jit: bool | None = None) -> np.ndarray:
    """``(n_streams, count)`` uniforms; row t is stream t's first ``count`` doubles."""
    states = np.ascontiguousarray(states, dtype=np.uint64)
    if _use_jit(use_jit):
        return _jit_kernels[0](states, count)
    return _uniform_matrix_numpy(states, count)


def bernoulli_matrix(
    states: np.ndarray,
    qs: np.ndarray,
    count: int,
    use_jit: bool | None = None,
) -> np.ndarray:
    """``(n_streams, count)`` 0/1 bytes; row t thresholds stream t's uniforms at qs[t]."""
    states = np.ascontiguousarray(states, dtype=np.uint64)
    qs = np.ascontiguousarray(qs, dtype=np.float64)
    if qs.shape != states.shape:
        raise ValueError("qs must have one entry per stream state")
    if _use_jit(use_jit):
        return _jit_kernels[1](states, qs, count)
    return _bernoulli_matrix_numpy(states, qs, count)


def _use_jit(use_jit: bool | None) -> bool:
    if use_jit is None:
        return _jit_kernels is not None
    if use_jit and _jit_kernels is None:
        raise RuntimeError("JIT kernels unavailable (numba missing or ORTHMERGE_NO_JIT set)")
    return use_jit


def warm_up() -> None:
    """Trigger JIT compilation outside any timed region."""
    states = np.zeros(1, dtype=np.uint64)
    uniform_matrix(states, 1)
    bernoulli_matrix(states, np.array([0.5]), 1)

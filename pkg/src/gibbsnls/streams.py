"""Counter-based Gaussian and uniform streams.

Every variate is a pure function of ``(master_seed, stream, sample_index,
mode_index, component)``, so draws do not depend on the order or grouping in
which samples are generated.  Prefix consistency follows: the first ``N``
modes of a sample are the same whatever truncation is requested.
"""
from __future__ import annotations

import numpy as np
from scipy.special import ndtri

GAUSSIAN = 0
UNIFORM = 1
BOOTSTRAP = 2

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)


def _mix(x):
    # splitmix64 finalizer (bijective on uint64)
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def _seed_key(seed, stream):
    with np.errstate(over="ignore"):
        return _mix(_mix(np.uint64(seed % 2**64) + _GOLDEN) ^ np.uint64(stream))


def _hash(seed, stream, sample_index, mode_index, component):
    # one mix per sample, one per (mode, component) word; modes < 2^62
    with np.errstate(over="ignore"):
        h = _mix(_seed_key(seed, stream) ^ (np.asarray(sample_index).astype(np.uint64) * _GOLDEN))
        word = (np.asarray(mode_index).astype(np.uint64) << np.uint64(1)) | np.asarray(component).astype(np.uint64)
        return _mix(h + word * _M2)


def uniforms(seed, stream, sample_index, mode_index, component=0):
    """Uniform variates in the open interval (0, 1), one per broadcast key."""
    h = _hash(seed, stream, sample_index, mode_index, component)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normals(seed, stream, sample_index, mode_index, component=0):
    return ndtri(uniforms(seed, stream, sample_index, mode_index, component))


def complex_gaussians(seed, samples, n_modes, *, stream=GAUSSIAN):
    """Normalized complex Gaussians g = (h + i l)/sqrt(2), shape (len(samples), n_modes).

    ``samples`` is an integer or an array of sample indices; mode ``n`` (1-based)
    sits in column ``n - 1``.
    """
    idx = np.atleast_1d(np.asarray(samples, dtype=np.int64))[:, None]
    modes = np.arange(1, n_modes + 1, dtype=np.int64)[None, :]
    h = standard_normals(seed, stream, idx, modes, 0)
    l = standard_normals(seed, stream, idx, modes, 1)
    return (h + 1j * l) / np.sqrt(2.0)


def sample_uniforms(seed, samples, *, stream=UNIFORM):
    idx = np.atleast_1d(np.asarray(samples, dtype=np.int64))
    return uniforms(seed, stream, idx, 0, 0)

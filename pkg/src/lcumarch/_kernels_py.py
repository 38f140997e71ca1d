"""Pure numpy versions of the compiled kernels (same signatures and results)."""
import numpy as np

_base_cache = {}


def _bases(dim, tmask, cmask, cval):
    key = (dim, tmask, cmask, cval)
    b = _base_cache.get(key)
    if b is None:
        i = np.arange(dim, dtype=np.int64)
        b = i[((i & tmask) == 0) & ((i & cmask) == cval)]
        if len(_base_cache) > 4096:
            _base_cache.clear()
        _base_cache[key] = b
    return b


def apply_matrix(states, mat, offsets, tmask, cmask, cval):
    dim = states.shape[1]
    idx = _bases(dim, int(tmask), int(cmask), int(cval))[:, None] + np.asarray(offsets)[None, :]
    sub = states[:, idx]                       # (R, B, m)
    states[:, idx] = sub @ np.asarray(mat).T


def xor_permute(states, masks):
    masks = np.asarray(masks, dtype=np.int64)
    rows = np.nonzero(masks)[0]
    if rows.size == 0:
        return
    i = np.arange(states.shape[1], dtype=np.int64)
    states[rows] = np.take_along_axis(states[rows], i[None, :] ^ masks[rows, None], axis=1)


def sample_rows(states, uniforms):
    p = states.real ** 2 + states.imag ** 2
    cum = np.cumsum(p, axis=1)
    u = np.asarray(uniforms) * cum[:, -1]
    out = (cum <= u[:, None]).sum(axis=1)
    return np.minimum(out, states.shape[1] - 1).astype(np.int64)

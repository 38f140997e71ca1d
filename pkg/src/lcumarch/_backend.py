"""Chooses the compiled kernels when built, else the numpy fallback.

Set LCUMARCH_PURE=1 to force the fallback.
"""
import os

NAME = "python"
if os.environ.get("LCUMARCH_PURE", "") not in ("1", "true", "yes"):
    try:
        from ._kernels import apply_matrix, sample_rows, xor_permute  # noqa: F401
        NAME = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass
if NAME == "python":
    from ._kernels_py import apply_matrix, sample_rows, xor_permute  # noqa: F401

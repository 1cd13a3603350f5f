"""Kernel backend selection.

The compiled extension (``condensate._ckern``) is preferred when it
imported cleanly; otherwise the numpy fallback (``condensate._pykern``)
serves the same API with identical bit-level results. Set
``CONDENSATE_BACKEND=py`` or ``=c`` to force a choice (forcing ``c`` when
the extension is unavailable raises at import).
"""

import os

from condensate import _pykern

_forced = os.environ.get("CONDENSATE_BACKEND", "").strip().lower()

_ckern = None
if _forced != "py":
    try:
        from condensate import _ckern as _ckern_mod

        _ckern = _ckern_mod
    except ImportError:
        _ckern = None

if _forced == "c" and _ckern is None:
    raise ImportError(
        "CONDENSATE_BACKEND=c requested but the compiled extension is not "
        "built; run `pip install -e .` or drop the override"
    )

kernels = _ckern if _ckern is not None else _pykern
BACKEND_NAME: str = kernels.NAME


def has_compiled_core() -> bool:
    return _ckern is not None


def get_backend(name: str):
    """Return a specific backend module (for side-by-side benchmarks)."""
    if name == "python":
        return _pykern
    if name == "c":
        if _ckern is None:
            raise ImportError("compiled backend not available")
        return _ckern
    raise ValueError(f"unknown backend '{name}'")


def available_backends() -> list[str]:
    names = ["python"]
    if _ckern is not None:
        names.insert(0, "c")
    return names

"""Backend selection: compiled Cython kernel when available, numpy otherwise.

Set NEUROREACH_BACKEND=reference (or =compiled) to force a choice; the
compiled request fails loudly if the extension is missing so benchmarks
cannot silently compare a backend against itself.
"""

from __future__ import annotations

import os

from . import reference

_FORCED = os.environ.get("NEUROREACH_BACKEND", "").strip().lower()

_compiled = None
if _FORCED != "reference":
    try:
        from . import compiled as _compiled  # noqa: F401
    except ImportError:
        _compiled = None
        if _FORCED == "compiled":
            raise

_active = _compiled if _compiled is not None else reference


def get_backend():
    return _active


def backend_name() -> str:
    return _active.BACKEND_NAME


def available_backends() -> list:
    out = [reference]
    if _compiled is not None:
        out.append(_compiled)
    return out

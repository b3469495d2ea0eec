"""Checkpoint container.

A checkpoint is a zip archive holding

* ``manifest.json``: ``{"format_version", "kind", "hyperparameters",
  "adam_step", "names", "extra"}``
* ``param/<name>.npy``, ``adam_m/<name>.npy``, ``adam_v/<name>.npy`` and
  ``ema/<name>.npy``: one little-endian float64 (``<f8``) array per
  parameter, in numpy ``.npy`` v1 format.

See ``docs/formats.md`` for a worked example.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ParseError
from .optim import ParamStore

FORMAT_VERSION = 1
_GROUPS = (("param", "params"), ("adam_m", "m"), ("adam_v", "v"), ("ema", "shadow"))


def save_checkpoint(path, store: ParamStore, kind: str, hyperparameters: dict,
                    extra: dict | None = None) -> None:
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "hyperparameters": hyperparameters,
        "adam_step": store.step,
        "names": store.names(),
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        for prefix, attr in _GROUPS:
            for name, arr in getattr(store, attr).items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arr, dtype="<f8"),
                                          version=(1, 0), allow_pickle=False)
                zf.writestr(f"{prefix}/{name}.npy", buf.getvalue())


def load_checkpoint(path, kind: str | None = None):
    """Return ``(store, manifest)``; checks ``kind`` when given."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise ParseError(f"{path}: not a checkpoint ({exc})") from exc
    with zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ParseError(f"{path}: unsupported format version {manifest.get('format_version')}")
        if kind is not None and manifest["kind"] != kind:
            raise ConfigurationError(f"{path}: expected a {kind} checkpoint, found {manifest['kind']}")
        store = ParamStore()
        for prefix, attr in _GROUPS:
            target = getattr(store, attr)
            for name in manifest["names"]:
                with zf.open(f"{prefix}/{name}.npy") as fh:
                    arr = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
                target[name] = arr.astype(np.float64)
        store.step = int(manifest["adam_step"])
    return store, manifest

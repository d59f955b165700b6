"""Named-tensor archive shared by backbone weight files and checkpoints.

An archive is an uncompressed zip holding ``manifest.json`` plus one member
per tensor. Tensor members are raw row-major little-endian float32 bytes; the
manifest's ``tensors`` table records shape and CRC-32 for each member.
"""

from __future__ import annotations

import json
import os
import zipfile
import zlib
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from .errors import IntegrityError, LoadError

MANIFEST = "manifest.json"
DTYPE = np.dtype("<f4")


def _blob(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype=DTYPE).tobytes(order="C")


def write_archive(path, manifest: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> None:
    """Write ``tensors`` and ``manifest`` to ``path`` atomically."""
    path = Path(path)
    table = {}
    blobs = {}
    for name, arr in tensors.items():
        if name == MANIFEST:
            raise ValueError(f"tensor name {name!r} is reserved")
        arr = np.asarray(arr)
        data = _blob(arr)
        blobs[name] = data
        table[name] = {"shape": list(arr.shape), "crc32": zlib.crc32(data)}
    full = dict(manifest)
    full["tensors"] = table
    tmp = path.with_name(path.name + ".tmp")
    try:
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
            zf.writestr(MANIFEST, json.dumps(full, indent=2, sort_keys=True).encode("utf-8"))
            for name, data in blobs.items():
                zf.writestr(name, data)
        os.replace(tmp, path)
    except OSError as exc:
        raise LoadError(f"cannot write {path}: {exc}") from exc
    finally:
        if tmp.exists():
            tmp.unlink()


def read_archive(path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Read an archive, verifying every blob against its recorded CRC-32.

    Raises LoadError when the file cannot be opened and IntegrityError when it
    is not a valid archive or a blob fails its checksum.
    """
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"no such file: {path}")
    try:
        zf = zipfile.ZipFile(path, "r")
    except zipfile.BadZipFile as exc:
        raise IntegrityError(f"{path} is not a tensor archive ({exc})") from exc
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    with zf:
        try:
            manifest = json.loads(zf.read(MANIFEST).decode("utf-8"))
        except KeyError as exc:
            raise IntegrityError(f"{path} has no {MANIFEST}") from exc
        except (zipfile.BadZipFile, ValueError) as exc:
            raise IntegrityError(f"{path}: unreadable manifest ({exc})") from exc
        table = manifest.get("tensors")
        if not isinstance(table, dict):
            raise IntegrityError(f"{path}: manifest lacks a tensors table")
        tensors = {}
        for name, meta in table.items():
            try:
                data = zf.read(name)
            except KeyError as exc:
                raise IntegrityError(f"tensor {name!r} missing from archive") from exc
            except (zipfile.BadZipFile, zlib.error) as exc:
                raise IntegrityError(f"tensor {name!r} is corrupted ({exc})") from exc
            if zlib.crc32(data) != meta.get("crc32"):
                raise IntegrityError(f"tensor {name!r} failed its CRC-32 check")
            shape = tuple(int(s) for s in meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            if len(data) != count * DTYPE.itemsize:
                raise IntegrityError(f"tensor {name!r} has {len(data)} bytes, expected {count * DTYPE.itemsize}")
            tensors[name] = np.frombuffer(data, dtype=DTYPE).reshape(shape).copy()
    return manifest, tensors

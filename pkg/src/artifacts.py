"""
Byte-stable artifact writers.

Every file a command produces goes through these helpers so that rerunning a
command with the same config and seed yields identical bytes:
  - JSON: sorted keys, fixed indent, trailing newline
  - CSV: pandas with the default float repr, no index
  - NPZ: zip members with a fixed timestamp
"""

import hashlib
import io
import json
import zipfile
from pathlib import Path
from typing import Any, Dict, Mapping

import numpy as np
import pandas as pd

# Earliest timestamp the zip format can express
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def sha256_file(path: Path) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path: Path, data: Any) -> Path:
    """Write JSON with sorted keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text())


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    """Write a frame as CSV without the index column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def write_npz(path: Path, arrays: Mapping[str, np.ndarray], meta: Dict[str, Any] = None) -> Path:
    """Write an .npz archive readable by ``np.load`` with reproducible bytes.

    ``meta`` is stored as a JSON document in the ``__meta__`` member (uint8 array).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    members = dict(arrays)
    if meta is not None:
        encoded = json.dumps(meta, sort_keys=True).encode()
        members["__meta__"] = np.frombuffer(encoded, dtype=np.uint8)

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        for name in sorted(members):
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.ascontiguousarray(members[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            archive.writestr(info, buffer.getvalue())
    return path


def read_npz(path: Path):
    """Read an archive written by :func:`write_npz`; returns (arrays, meta)."""
    with np.load(Path(path), allow_pickle=False) as archive:
        arrays = {name: archive[name] for name in archive.files if name != "__meta__"}
        meta = None
        if "__meta__" in archive.files:
            meta = json.loads(archive["__meta__"].tobytes().decode())
    return arrays, meta

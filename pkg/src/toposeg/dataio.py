"""Raw little-endian arrays with sidecar text headers; dataset directories.

A stored array is a pair ``name.raw`` / ``name.hdr``.  The header is plain
``key: value`` text carrying shape, dtype and voxel spacing.  A dataset
directory holds ``image_NNN`` / ``label_NNN`` pairs plus ``dataset.json``
with the generating metadata.
"""

import json
import os
from typing import Dict, List, Tuple

import numpy as np

from .errors import DataFormatError

_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int32": "<i4",
    "int64": "<i8",
    "uint8": "|u1",
}


def write_array(basepath: str, arr: np.ndarray, spacing=None) -> None:
    name = arr.dtype.name
    if name not in _DTYPES:
        raise DataFormatError(f"unsupported dtype {name}")
    if spacing is None:
        spacing = [1.0] * arr.ndim
    arr.astype(_DTYPES[name]).tofile(basepath + ".raw")
    with open(basepath + ".hdr", "w") as fh:
        fh.write(f"shape: {' '.join(str(s) for s in arr.shape)}\n")
        fh.write(f"dtype: {name}\n")
        fh.write(f"spacing: {' '.join(repr(float(s)) for s in spacing)}\n")


def read_array(basepath: str) -> np.ndarray:
    header: Dict[str, str] = {}
    try:
        with open(basepath + ".hdr") as fh:
            for line in fh:
                if ":" in line:
                    key, value = line.split(":", 1)
                    header[key.strip()] = value.strip()
    except OSError as exc:
        raise DataFormatError(f"cannot read header {basepath}.hdr: {exc}") from exc
    try:
        shape = tuple(int(s) for s in header["shape"].split())
        dtype = _DTYPES[header["dtype"]]
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"malformed header {basepath}.hdr") from exc
    data = np.fromfile(basepath + ".raw", dtype=dtype)
    expected = int(np.prod(shape))
    if data.size != expected:
        raise DataFormatError(
            f"{basepath}.raw holds {data.size} values, header says {expected}"
        )
    return data.reshape(shape)


def save_case(directory: str, index: int, image: np.ndarray, labels: np.ndarray) -> None:
    os.makedirs(directory, exist_ok=True)
    write_array(os.path.join(directory, f"image_{index:03d}"), image.astype(np.float32))
    write_array(os.path.join(directory, f"label_{index:03d}"), labels.astype(np.int32))


def load_case(directory: str, index: int) -> Tuple[np.ndarray, np.ndarray]:
    image = read_array(os.path.join(directory, f"image_{index:03d}"))
    labels = read_array(os.path.join(directory, f"label_{index:03d}"))
    return image.astype(np.float32), labels.astype(np.int64)


def list_cases(directory: str) -> List[int]:
    indices = []
    for name in sorted(os.listdir(directory)):
        if name.startswith("image_") and name.endswith(".hdr"):
            indices.append(int(name[len("image_"):-len(".hdr")]))
    return indices


def write_dataset_meta(directory: str, meta: dict) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "dataset.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset_meta(directory: str) -> dict:
    path = os.path.join(directory, "dataset.json")
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"missing dataset metadata {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed dataset metadata {path}: {exc}") from exc


def write_tsv(path: str, rows: List[dict], columns: List[str]) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_format(row[c]) for c in columns) + "\n")


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)

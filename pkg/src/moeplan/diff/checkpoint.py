"""Parameter checkpoints.

Layout: a numpy ``.npz`` archive. The entry ``__format__`` holds the string
``moeplan-params`` and ``__version__`` the integer format version; every
other entry is one parameter stored under its dotted name with its shape.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ShapeError

FORMAT_NAME = "moeplan-params"
FORMAT_VERSION = 1


def save_params(path, params: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    arrays = {name: np.asarray(value, dtype=np.float64) for name, value in params.items()}
    arrays["__format__"] = np.array(FORMAT_NAME)
    arrays["__version__"] = np.array(FORMAT_VERSION)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)


def load_params(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__format__" not in data.files or str(data["__format__"]) != FORMAT_NAME:
            raise ShapeError(f"{path}: not a parameter checkpoint")
        version = int(data["__version__"])
        if version != FORMAT_VERSION:
            raise ShapeError(f"{path}: unsupported checkpoint version {version}")
        return {k: np.array(data[k]) for k in data.files if not k.startswith("__")}

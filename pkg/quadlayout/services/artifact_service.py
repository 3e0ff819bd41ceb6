"""
Stage artifact files in a run directory
"""
import hashlib
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Type, TypeVar, Union

import numpy as np
from pydantic import BaseModel

from ..core.errors import MissingArtifact

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


def complex_pairs(values: Union[np.ndarray, Sequence[complex]]) -> list:
    """Complex array (any shape) as nested [re, im] lists"""
    array = np.asarray(values, dtype=complex)
    return np.stack([array.real, array.imag], axis=-1).tolist()


def from_pairs(pairs: list) -> np.ndarray:
    array = np.asarray(pairs, dtype=float)
    if array.size == 0:
        return np.zeros(array.shape[:-1] if array.ndim > 1 else (0,), dtype=complex)
    return array[..., 0] + 1j * array[..., 1]


class ArtifactService:
    """Reads and writes stage artifacts under one output directory"""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def exists(self, *names: str) -> bool:
        return all(self.path(name).exists() for name in names)

    def require(self, name: str) -> Path:
        path = self.path(name)
        if not path.exists():
            raise MissingArtifact(str(path))
        return path

    # JSON artifacts
    def write_model(self, name: str, model: BaseModel) -> Path:
        path = self.path(name)
        path.write_text(model.model_dump_json(indent=2) + "\n")
        logger.debug(f"Wrote {path}")
        return path

    def read_model(self, name: str, schema: Type[ModelT]) -> ModelT:
        return schema.model_validate_json(self.require(name).read_text())

    # Array artifacts (.npy is byte-stable for identical arrays)
    def write_array(self, name: str, array: np.ndarray) -> Path:
        path = self.path(name)
        np.save(path, np.ascontiguousarray(array), allow_pickle=False)
        return path

    def read_array(self, name: str) -> np.ndarray:
        return np.load(self.require(name), allow_pickle=False)

    # Hashing
    def file_hash(self, names: Iterable[str]) -> str:
        digest = hashlib.sha256()
        for name in sorted(names):
            path = self.path(name)
            digest.update(name.encode())
            if path.exists():
                digest.update(path.read_bytes())
        return digest.hexdigest()

    def present(self, names: Iterable[str]) -> List[str]:
        return [name for name in names if self.path(name).exists()]

    def discard(self, names: Iterable[str]) -> List[str]:
        """Remove stale outputs before a stage re-runs"""
        removed = []
        for name in names:
            path = self.path(name)
            if path.exists():
                path.unlink()
                removed.append(name)
        return removed

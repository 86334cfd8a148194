"""Recorded paths of the chain or the SDE."""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput


@dataclass
class Trajectory:
    """Times (diffusion units) and augmented states, one row per record."""

    times: np.ndarray
    states: np.ndarray
    sizes: tuple
    clamp_count: int = 0

    def __len__(self):
        return len(self.times)

    def locus(self, i: int) -> np.ndarray:
        o = int(sum(self.sizes[:i]))
        return self.states[:, o:o + self.sizes[i]]

    def header(self) -> list:
        cols = ["t"]
        for i, m in enumerate(self.sizes):
            cols += [f"x{i + 1}_{k + 1}" for k in range(m)]
        return cols

    def to_csv(self, path_or_buf=None) -> str | None:
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        data = np.column_stack([self.times, self.states])
        np.savetxt(buf, data, delimiter=",", fmt="%.17g")
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w") as fh:
                fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path, sizes=None) -> "Trajectory":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.size == 0:
            raise EmptyInput(f"{path}: no records")
        cols = header[1:]
        counts = {}
        for c in cols:
            locus = int(c[1:].split("_")[0])
            counts[locus] = counts.get(locus, 0) + 1
        parsed = tuple(counts[k] for k in sorted(counts))
        if sizes is not None and tuple(sizes) != parsed:
            raise DimensionMismatch(f"trajectory loci {parsed} do not match model {tuple(sizes)}")
        return cls(data[:, 0], data[:, 1:], parsed)

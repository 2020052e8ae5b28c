"""Discrete space-time white noise with deterministic, replicable streams.

Every random number in this package comes from a numpy ``Generator`` built
by :func:`generator`.  Stream derivation is splittable and documented: the
triple (master_seed, stream_label, replicate_id) keys a
``numpy.random.SeedSequence`` whose spawn key is (stream_label,
replicate_id); the bit generator is SFC64 and Gaussian variates use
numpy's ziggurat ``standard_normal``.  This makes replicates embarrassingly
parallel — any worker can regenerate any stream — and makes results
independent of scheduling and worker count.

Noise increments are cell averages: the increment over one grid cell is
Normal(0, dt*dx), i.i.d. across cells.  ``sample_noise`` materializes the
full (nt, nx) matrix; ``stream_noise`` delivers the bitwise-identical rows
one time step at a time for campaigns too large to hold in memory.

Stream labels partition subsystems under one master seed; see the
``*_STREAM`` constants in the modules that consume noise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .domain import BudgetError, GridSpec, cell_budget

GAUSSIAN_METHOD = "numpy Generator.standard_normal (ziggurat) over SFC64"

_MAGIC = b"CLNOISE1"


@dataclass(frozen=True)
class SeedSpec:
    """Key of one random stream: (master_seed, replicate_id, stream_label)."""

    master_seed: int
    replicate_id: int = 0
    stream_label: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError(f"master_seed must be a 64-bit integer, got {self.master_seed!r}")
        if self.replicate_id < 0:
            raise ValueError(f"replicate_id must be >= 0, got {self.replicate_id}")
        if not 0 <= self.stream_label < 2**20:
            raise ValueError(f"stream_label must be a small nonnegative integer, got {self.stream_label}")

    def replicate(self, replicate_id: int) -> "SeedSpec":
        return SeedSpec(self.master_seed, replicate_id, self.stream_label)


def generator(seed: SeedSpec) -> np.random.Generator:
    """The stream keyed by ``seed``; distinct triples give independent streams."""
    ss = np.random.SeedSequence(seed.master_seed, spawn_key=(seed.stream_label, seed.replicate_id))
    return np.random.Generator(np.random.SFC64(ss))


@dataclass(frozen=True)
class NoiseGrid:
    """Cell-averaged white-noise increments on a grid.

    ``increments[k, i]`` is the increment of cell (time step k, space cell i),
    Normal(0, dt*dx).
    """

    grid: GridSpec
    increments: np.ndarray
    seed: SeedSpec

    def __post_init__(self):
        expected = (self.grid.nt, self.grid.nx)
        if self.increments.shape != expected:
            raise ValueError(f"increments shape {self.increments.shape} != grid shape {expected}")


def sample_noise(grid: GridSpec, seed: SeedSpec, max_cells: int | None = None) -> NoiseGrid:
    """Materialize the full noise matrix for (grid, seed).

    Deterministic: the same arguments give a bit-for-bit identical matrix on
    any run, platform, or worker layout.  Raises BudgetError when the matrix
    would exceed the cell budget; use ``stream_noise`` instead.
    """
    budget = cell_budget(max_cells)
    if grid.cells > budget:
        raise BudgetError(
            f"noise matrix {grid.nt}x{grid.nx} = {grid.cells} cells exceeds budget "
            f"{budget}; use stream_noise"
        )
    g = generator(seed)
    inc = g.standard_normal((grid.nt, grid.nx))
    inc *= grid.cell_std
    return NoiseGrid(grid=grid, increments=inc, seed=seed)


def iter_noise_rows(grid: GridSpec, seed: SeedSpec):
    """Yield the nt rows of ``sample_noise(grid, seed).increments`` in time
    order without materializing the matrix.  Rows are bitwise identical to
    the batch path (numpy fills row-major from one stream)."""
    g = generator(seed)
    std = grid.cell_std
    for _ in range(grid.nt):
        row = g.standard_normal(grid.nx)
        row *= std
        yield row


def stream_noise(grid: GridSpec, seed: SeedSpec, consumer) -> None:
    """Feed each noise row to ``consumer(row)`` in time order."""
    for row in iter_noise_rows(grid, seed):
        consumer(row)


_DUMP_HEADER = "<8sQQddQQQ"


def dump_noise(noise: NoiseGrid, path) -> None:
    """Binary dump: header (nx, nt, dx, dt, seed triple) + row-major float64
    payload."""
    head = struct.pack(
        _DUMP_HEADER,
        _MAGIC,
        noise.grid.nx,
        noise.grid.nt,
        noise.grid.dx,
        noise.grid.dt,
        noise.seed.master_seed,
        noise.seed.replicate_id,
        noise.seed.stream_label,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(noise.increments, dtype=np.float64).tobytes())


def load_noise(path) -> NoiseGrid:
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize(_DUMP_HEADER))
        magic, nx, nt, dx, dt, master, rep, label = struct.unpack(_DUMP_HEADER, head)
        if magic != _MAGIC:
            raise ValueError(f"not a noise dump: bad magic {magic!r}")
        if dx != 1.0 / nx:
            raise ValueError(f"inconsistent dump header: dx={dx!r} for nx={nx}")
        payload = np.frombuffer(fh.read(), dtype=np.float64).reshape(nt, nx).copy()
    grid = GridSpec(nx=int(nx), nt=int(nt), dt=float(dt))
    seed = SeedSpec(int(master), int(rep), int(label))
    return NoiseGrid(grid=grid, increments=payload, seed=seed)

"""Sequential reference implementation of the mini-app data path.

This walks the exact per-step arithmetic (ghost fold, kernel chains,
reductions) one sub-grid at a time with no runtime, device, executors, or
aggregation involved. Checksums from any full-machine run must match it
bitwise. The constants and formulas are restated here on purpose, rather
than imported, so an accidental edit on either side fails the comparison.
"""

from __future__ import annotations

import math
from typing import List, Tuple

import numpy as np

_CELLS = 512
_FACE = 8
_C1 = (1.0000003, 0.9999998, 1.0000001, 0.9999997, 1.0000002)
_C2 = (1e-07, -1e-07, 2e-07, 5e-08, -2e-07)


def run_reference(subgrids: int, steps: int, chains_per_step: int = 3,
                  kernels_per_chain: int = 5) -> Tuple[float, List[float]]:
    """Returns (final checksum, per-step dt scalars)."""
    scale = float(subgrids * 1000 + _CELLS)
    grids = [(i * 1000.0 + np.arange(_CELLS, dtype=np.float64)) / scale
             for i in range(subgrids)]
    checksum = 0.0
    dts: List[float] = []
    for _step in range(steps):
        faces = [(g[:_FACE].copy(), g[-_FACE:].copy()) for g in grids]
        pieces: List[float] = []
        mins: List[float] = []
        for i, g in enumerate(grids):
            left_ghost = faces[(i - 1) % subgrids][1]
            right_ghost = faces[(i + 1) % subgrids][0]
            work = g.copy()
            work[:_FACE] = 0.5 * (work[:_FACE] + left_ghost)
            work[-_FACE:] = 0.5 * (work[-_FACE:] + right_ghost)
            for _chain in range(chains_per_step):
                for kind in range(kernels_per_chain):
                    work *= _C1[kind]
                    work += _C2[kind]
            g[:] = work
            mins.append(float(work.min()))
            pieces.append(float(work.sum()))
        dts.append(min(mins))
        checksum += math.fsum(pieces)
    return checksum, dts

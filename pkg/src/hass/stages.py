from __future__ import annotations

import enum


class SleepStage(enum.IntEnum):
    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4


STAGES = tuple(SleepStage)
N_STAGES = len(STAGES)

"""Profile-length groups shared by the linear ensemble and the reports."""
from __future__ import annotations

import enum

import numpy as np


class ProfileGroup(enum.IntEnum):
    SHORT = 0
    QUITE_SHORT = 1
    QUITE_LONG = 2
    LONG = 3

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    ProfileGroup.SHORT: "Short",
    ProfileGroup.QUITE_SHORT: "QuiteShort",
    ProfileGroup.QUITE_LONG: "QuiteLong",
    ProfileGroup.LONG: "Long",
}

# lower bounds of QuiteShort, QuiteLong, Long
GROUP_EDGES = (5, 8, 12)


def assign_group(profile_length: int) -> ProfileGroup:
    if profile_length < 0:
        raise ValueError("profile length must be >= 0")
    return ProfileGroup(int(np.searchsorted(GROUP_EDGES, profile_length, side="right")))


def assign_groups(profile_lengths) -> np.ndarray:
    """Vectorised :func:`assign_group`; returns int group codes."""
    lengths = np.asarray(profile_lengths)
    if lengths.size and lengths.min() < 0:
        raise ValueError("profile length must be >= 0")
    return np.searchsorted(GROUP_EDGES, lengths, side="right").astype(np.int64)

"""Parameter containers and batch types shared by the losses, model, and trainer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError

ROLE_FEATURE = "feature"
ROLE_HEAD = "head"
ROLES = (ROLE_FEATURE, ROLE_HEAD)


class ParameterSet:
    """Named tensors with a role per name.

    Role ``head`` marks the final classifier layer; everything else is
    ``feature``. Anchored penalties are computed over feature tensors only,
    so every operation that pairs two sets insists on exact alignment of
    names, shapes, and roles.
    """

    def __init__(self, tensors: dict[str, np.ndarray], roles: dict[str, str]):
        if set(tensors) != set(roles):
            raise AlignmentError("tensor names and role names differ")
        for name, role in roles.items():
            if role not in ROLES:
                raise AlignmentError(f"unknown role {role!r} for parameter {name!r}")
        self.tensors = {name: np.asarray(t) for name, t in tensors.items()}
        self.roles = dict(roles)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.tensors)

    def sorted_names(self, role: str | None = None) -> list[str]:
        if role is None or role == "all":
            return sorted(self.tensors)
        return sorted(n for n in self.tensors if self.roles[n] == role)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ParameterSet":
        return ParameterSet({n: t.copy() for n, t in self.tensors.items()}, self.roles)

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet(
            {n: t.astype(dtype) for n, t in self.tensors.items()}, self.roles
        )

    def require_aligned(self, other: "ParameterSet") -> None:
        for name in sorted(set(self.tensors) | set(other.tensors)):
            if name not in self.tensors or name not in other.tensors:
                raise AlignmentError(f"parameter {name!r} present in only one set")
            a, b = self.tensors[name], other.tensors[name]
            if a.shape != b.shape:
                raise AlignmentError(
                    f"shape mismatch for parameter {name!r}: {a.shape} vs {b.shape}"
                )
            if self.roles[name] != other.roles[name]:
                raise AlignmentError(
                    f"role mismatch for parameter {name!r}: "
                    f"{self.roles[name]} vs {other.roles[name]}"
                )

    def equal_values(self, other: "ParameterSet") -> bool:
        self.require_aligned(other)
        return all(
            np.array_equal(self.tensors[n], other.tensors[n]) for n in self.tensors
        )


@dataclass(frozen=True)
class RegularizerWeights:
    """Coefficients for the anchored penalties.

    ``s`` scales the self-training gate and is meant to stay in [0.1, 2.0];
    pass ``allow_wide_s=True`` to experiment outside that range.
    """

    lambda_pretrain: float = 1e-4
    alpha: float = 0.1
    beta: float = 0.01
    s: float = 1.0
    allow_wide_s: bool = False

    def __post_init__(self):
        if self.lambda_pretrain < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("regularizer coefficients must be nonnegative")
        if not self.allow_wide_s and not 0.1 <= self.s <= 2.0:
            raise ValueError(f"s={self.s} outside [0.1, 2.0]")


@dataclass
class LabeledBatch:
    """A batch of images in [0, 1] with one label per image.

    Labels are binary {0, 1} everywhere except the label-mixing ablation,
    which interpolates them inside [0, 1].
    """

    images: np.ndarray
    labels: np.ndarray
    sample_ids: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=self.images.dtype)
        if self.images.ndim != 4:
            raise ValueError(f"images must be m x c x h x w, got {self.images.shape}")
        m = self.images.shape[0]
        if m < 1:
            raise ValueError("batch must contain at least one sample")
        if self.labels.shape != (m,):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match batch size {m}"
            )
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
        if float(self.labels.min()) < 0.0 or float(self.labels.max()) > 1.0:
            raise ValueError("labels outside [0, 1]")
        if self.sample_ids is not None:
            self.sample_ids = np.asarray(self.sample_ids)
            if self.sample_ids.shape != (m,):
                raise ValueError("sample_ids must have one entry per sample")

    @property
    def size(self) -> int:
        return self.images.shape[0]

"""
Task-specific diffs over a frozen pretrained vector.

During training the diff is delta = z * w where z is a Hard-Concrete gate per
coordinate (optionally multiplied by a shared per-group gate). Head
coordinates are ungated and always use z = 1. After training a diff is a
sparse DiffVector added onto the pretrained parameters.
"""

from dataclasses import dataclass, field

import numpy as np

from apps.gates.services import (
    DEFAULT_L,
    DEFAULT_R,
    GateParams,
    expected_l0,
    expected_l0_exact,
    sample_gate,
)
from apps.tensors import engine as E
from apps.tensors.engine import DTYPE, Tensor

from .errors import DimensionMismatchError, GroupingError, InvalidDiffError
from .space import FlatParamSpace


@dataclass(frozen=True, eq=False)
class GroupPartition:
    """Disjoint index sets covering every non-head coordinate, one shared gate each.

    Groups may be ranges or integer arrays.
    """

    groups: tuple
    group_alpha: Tensor
    names: tuple = ()

    def __post_init__(self):
        if not isinstance(self.group_alpha, Tensor):
            object.__setattr__(self, "group_alpha", Tensor(self.group_alpha, requires_grad=True))
        if self.group_alpha.shape != (len(self.groups),):
            raise GroupingError(
                f"{len(self.groups)} groups but group_alpha has shape {self.group_alpha.shape}"
            )

    def __len__(self):
        return len(self.groups)

    def assignment(self, space):
        """Group id of every coordinate; head coordinates map to -1.

        Raises GroupingError unless the groups partition exactly the non-head
        coordinates of `space`.
        """
        if not self.groups:
            raise GroupingError("structured diff needs at least one group")
        owner = np.full(space.total_dim, -1, dtype=np.int64)
        for gid, members in enumerate(self.groups):
            members = np.asarray(members, dtype=np.int64)
            if members.size == 0:
                raise GroupingError(f"group {gid} is empty")
            if members.min() < 0 or members.max() >= space.total_dim:
                raise GroupingError(f"group {gid} has indices outside [0, {space.total_dim})")
            if np.any(owner[members] != -1) or np.unique(members).size != members.size:
                raise GroupingError(f"group {gid} overlaps another group")
            owner[members] = gid
        head = space.head_mask
        if np.any(owner[head] != -1):
            raise GroupingError("head coordinates cannot belong to a group")
        missing = np.flatnonzero((owner == -1) & ~head)
        if missing.size:
            raise GroupingError(f"{missing.size} non-head coordinates have no group, first is {missing[0]}")
        return owner


@dataclass(eq=False)
class GatedDiff:
    space: FlatParamSpace
    w: Tensor
    gate: GateParams
    structure: GroupPartition | None = None
    _group_index: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        d = self.space.total_dim
        if self.w.shape != (d,):
            raise DimensionMismatchError(d, self.w.shape[0] if self.w.ndim == 1 else self.w.shape, "w")
        if len(self.gate) != d:
            raise DimensionMismatchError(d, len(self.gate), "alpha")
        if self.structure is not None:
            owner = self.structure.assignment(self.space)
            self._group_index = np.where(owner < 0, 0, owner)

    @classmethod
    def initialize(
        cls,
        space,
        *,
        structured=False,
        alpha_init=5.0,
        group_alpha_init=5.0,
        w_init=0.0,
        l=DEFAULT_L,
        r=DEFAULT_R,
        grouping=None,
    ):
        d = space.total_dim
        w = Tensor(np.full(d, w_init), requires_grad=True)
        alpha = Tensor(np.full(d, alpha_init), requires_grad=True)
        structure = None
        if structured:
            structure = grouping or default_grouping(space, group_alpha_init)
        return cls(space, w, GateParams(alpha, l, r), structure)

    @property
    def structured(self):
        return self.structure is not None

    @property
    def noise_size(self):
        """Length of u consumed by one training sample: d, then one per group."""
        extra = len(self.structure) if self.structured else 0
        return self.space.total_dim + extra

    @property
    def group_gate(self):
        return GateParams(self.structure.group_alpha, self.gate.l, self.gate.r)

    @property
    def group_index(self):
        if not self.structured:
            raise GroupingError("diff is not structured")
        return self._group_index

    def parameters(self):
        params = [self.w, self.gate.alpha]
        if self.structured:
            params.append(self.structure.group_alpha)
        return params

    def clone(self):
        """Independent copy with fresh leaf tensors."""
        structure = None
        if self.structured:
            structure = GroupPartition(
                self.structure.groups,
                Tensor(self.structure.group_alpha.data, requires_grad=True),
                self.structure.names,
            )
        return GatedDiff(
            self.space,
            Tensor(self.w.data, requires_grad=True),
            GateParams(Tensor(self.gate.alpha.data, requires_grad=True), self.gate.l, self.gate.r),
            structure,
        )


@dataclass(frozen=True, eq=False)
class DiffVector:
    """Sparse diff: strictly increasing positions, no stored zeros."""

    space: FlatParamSpace
    positions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.int64).reshape(-1)
        values = np.asarray(self.values, dtype=DTYPE).reshape(-1)
        if positions.shape != values.shape:
            raise InvalidDiffError(f"{positions.size} positions but {values.size} values")
        if positions.size:
            if positions[0] < 0 or positions[-1] >= self.space.total_dim:
                raise InvalidDiffError(f"positions must lie in [0, {self.space.total_dim})")
            if np.any(np.diff(positions) <= 0):
                raise InvalidDiffError("positions must be strictly increasing")
        if np.any(values == 0):
            raise InvalidDiffError("diff stores an explicit zero")
        if not np.all(np.isfinite(values)):
            raise InvalidDiffError("diff values must be finite")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dense(cls, dense, space):
        dense = np.asarray(dense, dtype=DTYPE)
        if dense.shape != (space.total_dim,):
            raise DimensionMismatchError(space.total_dim, dense.size, "dense diff")
        positions = np.flatnonzero(dense)
        return cls(space, positions, dense[positions])

    @classmethod
    def empty(cls, space):
        return cls(space, np.empty(0, dtype=np.int64), np.empty(0, dtype=DTYPE))

    @property
    def dim(self):
        return self.space.total_dim

    @property
    def nnz(self):
        return int(self.positions.size)

    def __len__(self):
        return self.nnz

    @property
    def nonhead_nnz(self):
        return int(np.count_nonzero(~self.space.head_mask[self.positions]))

    @property
    def nonzero_fraction(self):
        """Stored non-head entries over the non-head dimension."""
        return self.nonhead_nnz / self.space.nonhead_dim

    def to_dense(self):
        out = np.zeros(self.dim, dtype=DTYPE)
        out[self.positions] = self.values
        return out


def default_grouping(space, group_alpha_init=5.0):
    """One group per non-head segment, named after the segment."""
    segments = space.nonhead_segments
    if not segments:
        raise GroupingError("space has no non-head segments to group")
    return GroupPartition(
        groups=tuple(range(seg.offset, seg.stop) for seg in segments),
        group_alpha=Tensor(np.full(len(segments), group_alpha_init), requires_grad=True),
        names=tuple(seg.name for seg in segments),
    )


def compose(theta, delta):
    """theta + delta as a new float32 vector; off-support entries are untouched."""
    theta = np.asarray(theta, dtype=DTYPE)
    if theta.shape != (delta.dim,):
        raise DimensionMismatchError(delta.dim, theta.size, "pretrained vector")
    out = theta.copy()
    out[delta.positions] += delta.values
    return out


def _masks(diff):
    head = diff.space.head_mask
    return Tensor(~head), Tensor(head)


def train_delta(diff, u):
    """delta = z_eff * w for one noise draw u of length diff.noise_size."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (diff.noise_size,):
        raise DimensionMismatchError(diff.noise_size, u.size, "noise")
    d = diff.space.total_dim
    z = sample_gate(diff.gate, u[:d]).z
    if diff.structured:
        zg = sample_gate(diff.group_gate, u[d:]).z
        z = E.mul(z, E.take(zg, diff.group_index))
    nonhead, head = _masks(diff)
    z = E.add(E.mul(z, nonhead), head)
    return E.mul(z, diff.w)


def expected_l0_total(diff):
    """Expected number of nonzero non-head coordinates, as a differentiable scalar."""
    p = expected_l0(diff.gate)
    if diff.structured:
        p = E.mul(p, E.take(expected_l0(diff.group_gate), diff.group_index))
    nonhead, _ = _masks(diff)
    return E.reduce_sum(E.mul(p, nonhead))


def expected_l0_total_exact(diff):
    """float64 evaluation of expected_l0_total."""
    gate = diff.gate
    p = expected_l0_exact(gate.alpha.data, gate.l, gate.r)
    if diff.structured:
        pg = expected_l0_exact(diff.structure.group_alpha.data, gate.l, gate.r)
        p = p * pg[diff.group_index]
    return float(np.sum(p[~diff.space.head_mask], dtype=np.float64))

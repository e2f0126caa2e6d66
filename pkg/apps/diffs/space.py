"""
Flat parameter space: every trainable array of a model laid end to end.

Segments tile [0, d) in order. Head segments (task output layers) sit in the
same space but are never gated and never counted against a sparsity budget.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from apps.tensors import engine as E

from .errors import SpaceError


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int
    shape: tuple
    layer: int
    head: bool = False

    @property
    def stop(self):
        return self.offset + self.length

    @property
    def layer_label(self):
        return self.name.split(".", 1)[0]


class FlatParamSpace:
    def __init__(self, segments):
        self.segments = tuple(segments)
        if not self.segments:
            raise SpaceError("a parameter space needs at least one segment")

        names = set()
        cursor = 0
        for seg in self.segments:
            if seg.name in names:
                raise SpaceError(f"duplicate segment name: {seg.name}")
            names.add(seg.name)
            if seg.offset != cursor:
                raise SpaceError(
                    f"segment {seg.name} starts at {seg.offset}, expected {cursor} (gap or overlap)"
                )
            if seg.length <= 0 or math.prod(seg.shape) != seg.length:
                raise SpaceError(f"segment {seg.name} length {seg.length} does not match shape {seg.shape}")
            if seg.layer < 0:
                raise SpaceError(f"segment {seg.name} has negative layer index")
            cursor = seg.stop
        self.total_dim = cursor
        self._by_name = {seg.name: seg for seg in self.segments}

    @classmethod
    def from_shapes(cls, entries):
        """Build from (name, shape, layer, head) tuples laid out in order."""
        segments = []
        offset = 0
        for name, shape, layer, head in entries:
            shape = tuple(int(s) for s in shape)
            length = math.prod(shape)
            segments.append(Segment(name, offset, length, shape, int(layer), bool(head)))
            offset += length
        return cls(segments)

    @classmethod
    def flat(cls, dim):
        """A single non-head segment covering a plain vector."""
        return cls([Segment("flat", 0, int(dim), (int(dim),), 0, False)])

    def __eq__(self, other):
        return isinstance(other, FlatParamSpace) and self.segments == other.segments

    def __hash__(self):
        return hash(self.segments)

    def __repr__(self):
        return f"FlatParamSpace(d={self.total_dim}, segments={len(self.segments)})"

    def segment(self, name):
        try:
            return self._by_name[name]
        except KeyError:
            raise SpaceError(f"unknown segment: {name}") from None

    @property
    def head_segments(self):
        return tuple(seg for seg in self.segments if seg.head)

    @property
    def nonhead_segments(self):
        return tuple(seg for seg in self.segments if not seg.head)

    @property
    def nonhead_dim(self):
        return sum(seg.length for seg in self.nonhead_segments)

    @cached_property
    def head_mask(self):
        mask = np.zeros(self.total_dim, dtype=bool)
        for seg in self.head_segments:
            mask[seg.offset:seg.stop] = True
        return mask

    @cached_property
    def layer_index(self):
        """Layer index of every coordinate."""
        layers = np.empty(self.total_dim, dtype=np.int64)
        for seg in self.segments:
            layers[seg.offset:seg.stop] = seg.layer
        return layers

    @property
    def layers(self):
        """Sorted (layer index, label) pairs; the label is the first segment's name prefix."""
        labels = {}
        for seg in self.segments:
            labels.setdefault(seg.layer, seg.layer_label)
        return sorted(labels.items())

    @property
    def penultimate_layer(self):
        """Highest layer index among non-head segments."""
        nonhead = self.nonhead_segments
        if not nonhead:
            raise SpaceError("space has no non-head segments")
        return max(seg.layer for seg in nonhead)

    def view(self, flat, name):
        seg = self.segment(name)
        return np.asarray(flat)[seg.offset:seg.stop].reshape(seg.shape)

    def tensor_view(self, theta, name):
        """Differentiable view of one segment of a flat parameter Tensor."""
        seg = self.segment(name)
        return E.reshape(E.take(theta, np.arange(seg.offset, seg.stop)), seg.shape)

    def first_divergence(self, other):
        """Describe the first segment that differs from `other`, or None if identical."""
        if self.total_dim != other.total_dim:
            return f"total_dim {self.total_dim} != {other.total_dim}"
        for i, (mine, theirs) in enumerate(zip(self.segments, other.segments)):
            if mine != theirs:
                return f"segment {i}: {mine} != {theirs}"
        if len(self.segments) != len(other.segments):
            return f"segment count {len(self.segments)} != {len(other.segments)}"
        return None

"""Randomized-response channel over ``k`` groups.

A record with group ``a`` reports ``z = a`` with probability ``pi`` and each
of the other ``k - 1`` labels with probability ``pi_bar``. Per-record draws
come from a counter-based generator keyed by the seed, so record ``i`` always
sees the same uniform regardless of how records are partitioned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from privfair.core import LabeledDataset, PrivatizedDataset
from privfair.errors import ConfigError, DegenerateChannel, GroupOutOfRange

PRIVATIZE_STREAM = 0x5052


def record_uniforms(seed: int, stream: int, start: int, stop: int) -> np.ndarray:
    """Uniforms in [0, 1) for record indices ``start..stop-1``.

    Value ``i`` depends only on ``(seed, stream, i)``: Philox is a counter
    generator and each counter step yields four doubles.
    """
    if stop <= start:
        return np.empty(0)
    key = np.random.SeedSequence([int(seed), int(stream)]).generate_state(2, dtype=np.uint64)
    bitgen = np.random.Philox(key=key)
    block = start // 4
    bitgen.advance(block)
    draws = np.random.Generator(bitgen).random(stop - 4 * block)
    return draws[start - 4 * block:]


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray
    inverse: np.ndarray


@dataclass(frozen=True)
class RRMechanism:
    epsilon: float
    group_count: int

    @cached_property
    def pi(self) -> float:
        # e^eps / (k - 1 + e^eps), written to avoid overflow at large eps
        return 1.0 / (1.0 + (self.group_count - 1) * math.exp(-self.epsilon))

    @cached_property
    def pi_bar(self) -> float:
        return math.exp(-self.epsilon) / (1.0 + (self.group_count - 1) * math.exp(-self.epsilon))

    @property
    def invertible(self) -> bool:
        return self.epsilon > 0

    @cached_property
    def privacy_constant(self) -> float:
        """C = (k - 2 + e^eps) / (e^eps - 1)."""
        if not self.invertible:
            raise DegenerateChannel("privacy constant is infinite at epsilon = 0")
        em1 = math.expm1(self.epsilon)
        return (self.group_count - 1 + em1) / em1

    @cached_property
    def matrix(self) -> np.ndarray:
        """Channel matrix ``Pi[z, a] = Q(z | a)`` (symmetric, row-stochastic)."""
        k = self.group_count
        m = np.full((k, k), self.pi_bar)
        np.fill_diagonal(m, self.pi)
        m.setflags(write=False)
        return m

    @cached_property
    def inverse_coefficients(self) -> tuple[float, float]:
        """Diagonal and off-diagonal entries of the inverse channel matrix.

        ``(pi + k - 2) / (k pi - 1)`` and ``(pi - 1) / (k pi - 1)``.
        """
        if not self.invertible:
            raise DegenerateChannel("randomized response with epsilon = 0 is not invertible")
        k = self.group_count
        # k*pi - 1 = (k - 1)(e^eps - 1) / (k - 1 + e^eps)
        denom = (k - 1) * math.expm1(self.epsilon) / (k - 1 + math.exp(self.epsilon))
        return (self.pi + k - 2) / denom, (self.pi - 1) / denom

    def probability(self, z, a):
        return np.where(np.asarray(z) == np.asarray(a), self.pi, self.pi_bar)


def make_mechanism(epsilon: float, group_count: int) -> RRMechanism:
    if group_count < 2:
        raise ConfigError("randomized response needs at least two groups")
    if not (epsilon >= 0) or math.isinf(epsilon):
        raise ConfigError("epsilon must be a finite nonnegative number")
    return RRMechanism(float(epsilon), int(group_count))


def channel_inverse(mechanism: RRMechanism) -> ChannelMatrix:
    diag, off = mechanism.inverse_coefficients
    k = mechanism.group_count
    inv = np.full((k, k), off)
    np.fill_diagonal(inv, diag)
    inv.setflags(write=False)
    return ChannelMatrix(mechanism.matrix, inv)


def randomize_groups(groups: np.ndarray, mechanism: RRMechanism, seed: int, offset: int = 0) -> np.ndarray:
    """Apply the channel to a vector of groups.

    ``offset`` is the global index of ``groups[0]``; a chunk processed with
    its offset yields the same values as the full vector.
    """
    groups = np.asarray(groups, dtype=np.int64)
    k = mechanism.group_count
    if groups.size and (groups.min() < 0 or groups.max() >= k):
        raise GroupOutOfRange(f"groups must lie in [0, {k})")
    u = record_uniforms(seed, PRIVATIZE_STREAM, offset, offset + groups.size)
    flip = u >= mechanism.pi
    out = groups.copy()
    # on a flip, (u - pi) / pi_bar is uniform on [0, k-1): pick the shift
    shift = 1 + np.minimum(((u[flip] - mechanism.pi) / mechanism.pi_bar).astype(np.int64), k - 2)
    out[flip] = (groups[flip] + shift) % k
    return out


def privatize(dataset: LabeledDataset, mechanism: RRMechanism, seed: int) -> PrivatizedDataset:
    if dataset.group_count != mechanism.group_count:
        raise GroupOutOfRange("dataset and mechanism disagree on the number of groups")
    z = randomize_groups(dataset.groups, mechanism, seed)
    return PrivatizedDataset(dataset.features, dataset.labels, z, dataset.group_count)

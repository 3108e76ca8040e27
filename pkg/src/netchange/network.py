"""Unweighted networks on a fixed node set, stored as packed edge bits."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def slot_pairs(d: int, directed: bool) -> tuple[tuple[int, int], ...]:
    """Admissible (i, j) slots in bit order: i < j when undirected, i != j when directed."""
    if directed:
        return tuple((i, j) for i in range(d) for j in range(d) if i != j)
    return tuple((i, j) for i in range(d) for j in range(i + 1, d))


def n_slots(d: int, directed: bool) -> int:
    return d * (d - 1) if directed else d * (d - 1) // 2


@dataclass(frozen=True)
class Network:
    """A simple graph on ``d`` nodes.

    Bit ``b`` of ``bits`` is the presence of the ``b``-th slot in
    :func:`slot_pairs`. Self-loops cannot be represented and undirected
    graphs are symmetric by construction.
    """

    d: int
    directed: bool = False
    bits: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"node count must be positive, got {self.d}")
        if self.bits < 0 or self.bits >> n_slots(self.d, self.directed):
            raise ValueError("bit pattern has bits outside the admissible slots")

    @property
    def n_slots(self) -> int:
        return n_slots(self.d, self.directed)

    @classmethod
    def empty(cls, d: int, directed: bool = False) -> "Network":
        return cls(d, directed, 0)

    @classmethod
    def complete(cls, d: int, directed: bool = False) -> "Network":
        return cls(d, directed, (1 << n_slots(d, directed)) - 1)

    @classmethod
    def from_slots(cls, d: int, directed: bool, present) -> "Network":
        """Build from a boolean vector over :func:`slot_pairs`."""
        present = np.asarray(present, dtype=bool)
        if present.shape != (n_slots(d, directed),):
            raise ValueError("slot vector has the wrong length")
        packed = np.packbits(present, bitorder="little")
        return cls(d, directed, int.from_bytes(packed.tobytes(), "little"))

    @classmethod
    def from_adjacency(cls, adj, directed: bool = False) -> "Network":
        adj = np.asarray(adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        if not np.isin(adj, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(adj)):
            raise ValueError("self-loops are not allowed")
        if not directed and not np.array_equal(adj, adj.T):
            raise ValueError("undirected adjacency must be symmetric")
        d = adj.shape[0]
        present = [adj[i, j] == 1 for i, j in slot_pairs(d, directed)]
        return cls.from_slots(d, directed, present)

    def slots(self) -> np.ndarray:
        m = self.n_slots
        raw = np.frombuffer(self.bits.to_bytes((m + 7) // 8 or 1, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[:m].astype(bool)

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.d, self.d), dtype=np.int8)
        for (i, j), on in zip(slot_pairs(self.d, self.directed), self.slots()):
            if on:
                adj[i, j] = 1
                if not self.directed:
                    adj[j, i] = 1
        return adj

    def relabel(self, perm) -> "Network":
        """Apply the node permutation ``i -> perm[i]``."""
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(self.d)):
            raise ValueError("not a permutation of the node set")
        adj = self.adjacency()
        out = np.zeros_like(adj)
        out[np.ix_(perm, perm)] = adj
        return Network.from_adjacency(out, self.directed)

    def to_text(self) -> str:
        """Debug form: ``d`` lines of 0/1 characters."""
        return "\n".join("".join(str(v) for v in row) for row in self.adjacency())

    @classmethod
    def from_text(cls, text: str, directed: bool = False) -> "Network":
        rows = [line.strip() for line in text.strip().splitlines()]
        adj = [[int(ch) for ch in row] for row in rows]
        return cls.from_adjacency(adj, directed)


def edges(x: Network) -> int:
    """Edge count: half the adjacency sum if undirected, the full sum if directed."""
    return x.bits.bit_count()


def sample_bernoulli_graph(d: int, directed: bool, p: float, rng: np.random.Generator) -> Network:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"edge probability must lie in [0, 1], got {p}")
    return Network.from_slots(d, directed, rng.random(n_slots(d, directed)) < p)


def all_networks(d: int, directed: bool = False) -> list[Network]:
    """Every network on ``d`` nodes, ordered by bit pattern."""
    m = n_slots(d, directed)
    if m > 20:
        raise ValueError(f"refusing to enumerate 2**{m} networks")
    return [Network(d, directed, b) for b in range(1 << m)]

"""Fixed-capacity FIFO store of (sensor traits, actuator traits, best pairing)."""
import numpy as np


class ReplayBuffer:
    def __init__(self, capacity, S, K):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.xs = np.zeros((capacity, S, 2))
        self.xa = np.zeros((capacity, K, 2))
        self.targets = np.zeros((capacity, K), dtype=np.int64)
        self.size = 0
        self.head = 0          # next slot to write
        self.pushed = 0        # total insertions, for FIFO bookkeeping

    def __len__(self):
        return self.size

    def push(self, xs, xa, target):
        i = self.head
        self.xs[i], self.xa[i], self.targets[i] = xs, xa, target
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushed += 1

    def ordered(self):
        """Indices from oldest to newest."""
        start = (self.head - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def sample(self, n, rng):
        """n distinct entries drawn uniformly (all entries if n >= size)."""
        idx = rng.choice(self.size, size=min(n, self.size), replace=False)
        slots = self.ordered()[idx]
        return self.xs[slots], self.xa[slots], self.targets[slots]

    def state(self):
        return {"xs": self.xs, "xa": self.xa, "targets": self.targets,
                "counters": np.array([self.size, self.head, self.pushed], dtype=np.int64)}

    @classmethod
    def from_state(cls, capacity, st):
        S, K = st["xs"].shape[1], st["xa"].shape[1]
        buf = cls(capacity, S, K)
        buf.xs[...] = st["xs"]
        buf.xa[...] = st["xa"]
        buf.targets[...] = st["targets"]
        buf.size, buf.head, buf.pushed = (int(c) for c in st["counters"])
        return buf

"""Extended Dirichlet label partitioning, ExDir(C, alpha).

Two levels: every client first receives ``C`` distinct classes, then the
samples of each class are split among its owners with Dirichlet(alpha)
proportions restricted to those owners.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .objectives import ConfigurationError
from .sampling import PARTITION, stream


@dataclass(frozen=True)
class LabeledDataset:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 1 or lab.size == 0:
            raise ConfigurationError("labels must be a non-empty 1-d array")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ConfigurationError("labels must be integers")
        lab = lab.astype(np.int64)
        if lab.min() < 0 or lab.max() >= self.num_classes:
            raise ConfigurationError(f"labels must lie in 0..{self.num_classes - 1}")
        missing = np.flatnonzero(np.bincount(lab, minlength=self.num_classes) == 0)
        if missing.size:
            raise ConfigurationError(f"classes without samples: {missing.tolist()}")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def from_labels(cls, labels, num_classes=None) -> LabeledDataset:
        lab = np.asarray(labels)
        return cls(lab, int(lab.max()) + 1 if num_classes is None else num_classes)

    @property
    def N(self) -> int:
        return self.labels.size

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class Ownership:
    matrix: np.ndarray  # (M, num_classes) bool; column c is the support q_c

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    def prior(self, c: int) -> np.ndarray:
        return self.matrix[:, c].astype(np.float64)

    def owners(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.matrix[:, c])


@dataclass
class Partition:
    clients: list
    C: int
    alpha: float
    seed: int | None = None

    @property
    def M(self) -> int:
        return len(self.clients)

    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.clients])

    def to_dict(self) -> dict:
        return {
            "meta": {"M": self.M, "C": self.C, "alpha": self.alpha, "seed": self.seed},
            "clients": [[int(i) for i in c] for c in self.clients],
        }


def allocate_classes(M: int, C: int, num_classes: int, rng: np.random.Generator) -> Ownership:
    """Give each client ``C`` distinct classes, covering every class.

    The ``M*C`` ownership slots are dealt round-robin over a shuffled class
    order, so each class ends up with ``floor(MC/n)`` or ``ceil(MC/n)``
    owners; the client order is then shuffled.
    """
    if M < 1 or C < 1:
        raise ConfigurationError("need M >= 1 and C >= 1")
    if C > num_classes:
        raise ConfigurationError(f"C={C} exceeds the number of classes {num_classes}")
    if M * C < num_classes:
        raise ConfigurationError(f"M*C={M * C} slots cannot cover {num_classes} classes")
    order = rng.permutation(num_classes)
    slots = (np.arange(M)[:, None] * C + np.arange(C)[None, :]) % num_classes
    owned = np.zeros((M, num_classes), dtype=bool)
    rows = rng.permutation(M)
    owned[rows[:, None], order[slots]] = True
    return Ownership(owned)


def largest_remainder(shares, total: int) -> np.ndarray:
    """Integer counts proportional to ``shares`` summing to ``total``.

    Leftover units go to the largest fractional parts; ties favour the lower index.
    """
    p = np.asarray(shares, dtype=np.float64)
    p = p / p.sum()
    raw = p * total
    counts = np.floor(raw).astype(np.int64)
    left = total - int(counts.sum())
    if left > 0:
        frac = raw - counts
        # stable sort on -frac keeps index order among ties
        counts[np.argsort(-frac, kind="stable")[:left]] += 1
    return counts


def _dirichlet(rng, alpha, k):
    if k == 1:
        return np.ones(1)
    p = rng.dirichlet(np.full(k, alpha))
    if not np.all(np.isfinite(p)) or p.sum() <= 0:
        raise ConfigurationError(f"Dirichlet draw failed for alpha={alpha}")
    return p


def allocate_samples(dataset: LabeledDataset, ownership: Ownership, alpha: float,
                     rng: np.random.Generator, C: int | None = None) -> Partition:
    if not alpha > 0:
        raise ConfigurationError("alpha must be positive")
    n = dataset.num_classes
    if ownership.matrix.shape[1] != n:
        raise ConfigurationError("ownership matrix does not match the number of classes")
    M = ownership.M
    counts = np.zeros((M, n), dtype=np.int64)
    pools = []
    for c in range(n):
        idx = np.flatnonzero(dataset.labels == c)
        pools.append(rng.permutation(idx))
        owners = ownership.owners(c)
        if owners.size == 0:
            raise ConfigurationError(f"class {c} has no owner")
        counts[owners, c] = largest_remainder(_dirichlet(rng, alpha, owners.size), idx.size)

    _steal_for_coverage(counts, ownership.matrix)

    parts = [[] for _ in range(M)]
    for c in range(n):
        start = 0
        for m in ownership.owners(c):
            k = counts[m, c]
            parts[m].append(pools[c][start:start + k])
            start += k
    clients = [np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in parts]
    if C is None:
        C = int(ownership.matrix.sum(axis=1).max())
    return Partition(clients, C, float(alpha))


def _steal_for_coverage(counts, owned):
    # an owner left with no samples of a class takes one from that class's largest owner
    M, n = counts.shape
    for c in range(n):
        for m in np.flatnonzero(owned[:, c]):
            if counts[m, c] > 0:
                continue
            donor = int(np.argmax(np.where(owned[:, c], counts[:, c], -1)))
            if counts[donor, c] >= 2:
                counts[donor, c] -= 1
                counts[m, c] += 1


def exdir(dataset: LabeledDataset, M: int, C: int, alpha: float, seed: int) -> Partition:
    """ExDir(C, alpha) partition of ``dataset`` over ``M`` clients."""
    own = allocate_classes(M, C, dataset.num_classes, stream(seed, PARTITION, 0))
    part = allocate_samples(dataset, own, alpha, stream(seed, PARTITION, 1), C=C)
    part.seed = int(seed)
    return part


@dataclass(frozen=True)
class PartitionStats:
    histograms: np.ndarray      # (M, num_classes) per-client class counts
    class_spread: np.ndarray    # clients holding at least one sample of each class
    classes_per_client: np.ndarray
    violations: list            # clients whose class count differs from the target
    mean_pairwise_tv: float

    @property
    def total(self) -> int:
        return int(self.histograms.sum())


def mean_pairwise_tv(histograms) -> float:
    """Mean total-variation distance between the label distributions of non-empty clients."""
    h = np.asarray(histograms, dtype=np.float64)
    h = h[h.sum(axis=1) > 0]
    if h.shape[0] < 2:
        return 0.0
    p = h / h.sum(axis=1, keepdims=True)
    m = p.shape[0]
    acc = 0.0
    for i in range(m - 1):
        acc += 0.5 * np.abs(p[i + 1:] - p[i]).sum()
    return acc / (m * (m - 1) / 2)


def partition_stats(partition: Partition, dataset: LabeledDataset) -> PartitionStats:
    n = dataset.num_classes
    hist = np.zeros((partition.M, n), dtype=np.int64)
    for m, idx in enumerate(partition.clients):
        hist[m] = np.bincount(dataset.labels[np.asarray(idx, dtype=np.int64)], minlength=n)
    per_client = (hist > 0).sum(axis=1)
    target = min(partition.C, n)
    return PartitionStats(
        histograms=hist,
        class_spread=(hist > 0).sum(axis=0),
        classes_per_client=per_client,
        violations=np.flatnonzero(per_client != target).tolist(),
        mean_pairwise_tv=mean_pairwise_tv(hist),
    )


def check_partition(partition: Partition, dataset: LabeledDataset) -> None:
    """Raise unless client index sets are disjoint and cover every sample."""
    allidx = np.concatenate([np.asarray(c, dtype=np.int64) for c in partition.clients])
    if allidx.size != dataset.N or not np.array_equal(np.sort(allidx), np.arange(dataset.N)):
        raise ConfigurationError("partition is not a disjoint cover of the dataset")


# -- file formats ------------------------------------------------------------

def read_labels(path, fmt: str = "i32") -> np.ndarray:
    """Load labels from little-endian int32 binary (``i32``) or the first CSV column."""
    if fmt == "i32":
        return np.fromfile(path, dtype="<i4").astype(np.int64)
    if fmt == "csv":
        out = []
        with open(path, newline="") as fh:
            for i, row in enumerate(csv.reader(fh)):
                if not row or not row[0].strip():
                    continue
                try:
                    out.append(int(row[0]))
                except ValueError:
                    if i == 0:
                        continue  # header
                    raise ConfigurationError(f"non-integer label on line {i + 1}: {row[0]!r}")
        return np.array(out, dtype=np.int64)
    raise ConfigurationError(f"unknown label format {fmt!r}; use 'i32' or 'csv'")


def write_labels(labels, path, fmt: str = "i32") -> None:
    lab = np.asarray(labels)
    if fmt == "i32":
        lab.astype("<i4").tofile(path)
    elif fmt == "csv":
        Path(path).write_text("".join(f"{int(v)}\n" for v in lab))
    else:
        raise ConfigurationError(f"unknown label format {fmt!r}")


def partition_json(partition: Partition) -> str:
    return json.dumps(partition.to_dict(), separators=(",", ":")) + "\n"


def save_partition(partition: Partition, path) -> None:
    Path(path).write_text(partition_json(partition))


def load_partition(path) -> Partition:
    data = json.loads(Path(path).read_text())
    meta = data["meta"]
    clients = [np.asarray(c, dtype=np.int64) for c in data["clients"]]
    if len(clients) != meta["M"]:
        raise ConfigurationError("client count does not match meta.M")
    return Partition(clients, int(meta["C"]), float(meta["alpha"]), meta.get("seed"))

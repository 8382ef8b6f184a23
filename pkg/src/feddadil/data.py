"""Multi-domain datasets: synthetic rotated Gaussian blobs and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dictionary import SOURCE, TARGET, ClientDataset

GROUND_TRUTH_DIR = "ground_truth"
TARGET_TRUTH_FILE = "target_labels.csv"


@dataclass(frozen=True)
class SyntheticBenchmarkSpec:
    """Gaussian class blobs, mapped per domain by a rotation and a translation.

    Class means sit on a circle of ``radius`` in the first two coordinates
    (on a line when ``dim == 1``). ``rotations`` are in degrees and act on
    the first two coordinates; ``translations`` default to zero.
    """

    n_domains: int = 4
    n_classes: int = 5
    dim: int = 2
    samples_per_domain: int = 300
    rotations: tuple[float, ...] = (0.0, 15.0, 30.0, 45.0)
    translations: tuple[tuple[float, ...], ...] | None = None
    noise: tuple[float, ...] | float = 0.6
    radius: float = 4.0
    target: int = -1  # index of the unlabeled domain; -1 is the last one

    def __post_init__(self):
        if self.n_domains < 2:
            raise ValueError("n_domains must be >= 2")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.samples_per_domain < self.n_classes:
            raise ValueError("samples_per_domain must be >= n_classes")
        if len(self.rotations) != self.n_domains:
            raise ValueError(f"rotations: expected {self.n_domains} angles, got {len(self.rotations)}")
        if self.translations is not None:
            if len(self.translations) != self.n_domains or any(len(t) != self.dim for t in self.translations):
                raise ValueError("translations must be one dim-vector per domain")
        if np.ndim(self.noise) and len(self.noise) != self.n_domains:
            raise ValueError("noise must be a scalar or one value per domain")
        if np.any(np.asarray(self.noise) < 0):
            raise ValueError("noise must be >= 0")
        if self.radius <= 0:
            raise ValueError("radius must be > 0")
        if not -self.n_domains <= self.target < self.n_domains:
            raise ValueError(f"target index {self.target} out of range")

    @property
    def target_index(self) -> int:
        return self.target % self.n_domains

    def class_means(self) -> np.ndarray:
        means = np.zeros((self.n_classes, self.dim))
        if self.dim == 1:
            means[:, 0] = self.radius * (np.arange(self.n_classes) - (self.n_classes - 1) / 2)
        else:
            t = 2 * np.pi * np.arange(self.n_classes) / self.n_classes
            means[:, 0] = self.radius * np.cos(t)
            means[:, 1] = self.radius * np.sin(t)
        return means


def rotation(dim: int, degrees: float) -> np.ndarray:
    """Rotation acting on the first two coordinates (identity when dim == 1)."""
    R = np.eye(dim)
    if dim >= 2:
        a = math.radians(degrees)
        R[:2, :2] = [[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]
    return R


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=int)
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


@dataclass
class DomainData:
    """Client datasets plus the target's ground truth, kept apart from them."""

    datasets: list[ClientDataset]
    target_truth: np.ndarray | None = None
    classes: list[str] = field(default_factory=list)

    @property
    def target(self) -> ClientDataset:
        return next(d for d in self.datasets if d.role == TARGET)


def generate_synthetic(spec: SyntheticBenchmarkSpec, seed: int = 0) -> DomainData:
    rng = np.random.default_rng(seed)
    means = spec.class_means()
    noise = np.broadcast_to(np.asarray(spec.noise, dtype=float), (spec.n_domains,))
    datasets, truth = [], None
    for ell in range(spec.n_domains):
        y = np.arange(spec.samples_per_domain) % spec.n_classes
        y = y[rng.permutation(y.size)]
        X = means[y] + noise[ell] * rng.standard_normal((y.size, spec.dim))
        X = X @ rotation(spec.dim, spec.rotations[ell]).T
        if spec.translations is not None:
            X = X + np.asarray(spec.translations[ell], dtype=float)
        if ell == spec.target_index:
            datasets.append(ClientDataset(X, None, TARGET, str(ell)))
            truth = y
        else:
            datasets.append(ClientDataset(X, one_hot(y, spec.n_classes), SOURCE, str(ell)))
    return DomainData(datasets, truth, [str(c) for c in range(spec.n_classes)])


def write_domains_csv(path, data: DomainData, domain_column="domain", label_column="label"):
    """Write all domains to one CSV; target rows get an empty label.

    The target's ground truth goes to ``ground_truth/target_labels.csv`` next
    to ``path`` so that loading the domain file never touches it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = data.datasets[0].features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([domain_column, label_column] + [f"x{j}" for j in range(dim)])
        for ds in data.datasets:
            ys = ds.labels.argmax(1) if ds.labeled else [None] * ds.n
            for x, y in zip(ds.features, ys):
                label = "" if y is None else data.classes[y]
                w.writerow([ds.name, label] + [repr(float(v)) for v in x])
    if data.target_truth is not None:
        write_target_truth(path.parent / GROUND_TRUTH_DIR / TARGET_TRUTH_FILE, data.target_truth, data.classes)
    return path


def write_target_truth(path, truth, classes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"])
        for y in truth:
            w.writerow([classes[y]])


def read_target_truth(path, classes) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["label"]:
        raise ValueError(f"{path}: expected a single 'label' column")
    try:
        return np.array([index[r[0]] for r in rows[1:]], dtype=int)
    except KeyError as exc:
        raise ValueError(f"{path}: unknown class {exc.args[0]!r}") from None


def _class_key(label: str):
    # integer labels sort numerically, anything else lexicographically after them
    return (0, int(label), "") if label.lstrip("-").isdigit() else (1, 0, label)


def load_csv_domains(path, domain_column="domain", label_column="label", target_domain=None,
                     dtype=float) -> DomainData:
    """One client dataset per distinct value of ``domain_column``.

    Every other column must be numeric. Labels of the target domain are
    stripped from its dataset and returned separately as ``target_truth``
    (None when the file leaves them blank). Domains keep first-appearance
    order; classes are sorted, numerically when they are integers.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        for col in (domain_column, label_column):
            if col not in header:
                raise ValueError(f"{path}: missing column {col!r} (have {header})")
        di, li = header.index(domain_column), header.index(label_column)
        feat_idx = [j for j in range(len(header)) if j not in (di, li)]
        if not feat_idx:
            raise ValueError(f"{path}: no feature columns")
        domains: dict[str, tuple[list, list]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            feats = []
            for j in feat_idx:
                try:
                    v = float(row[j])
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: column {header[j]!r} is not numeric: {row[j]!r}") from None
                if not math.isfinite(v):
                    raise ValueError(f"{path}:{lineno}: column {header[j]!r} is not finite")
                feats.append(v)
            X, Y = domains.setdefault(row[di], ([], []))
            X.append(feats)
            Y.append(row[li])

    if target_domain is None:
        raise ValueError("a target domain must be named")
    target_domain = str(target_domain)
    if target_domain not in domains:
        raise ValueError(f"{path}: unknown target domain {target_domain!r} (have {list(domains)})")
    classes = sorted({y for name, (_, ys) in domains.items() for y in ys
                      if name != target_domain or y != ""}, key=_class_key)
    if "" in classes:
        raise ValueError(f"{path}: source rows with an empty {label_column!r}")
    index = {c: i for i, c in enumerate(classes)}

    datasets, truth = [], None
    for name, (X, ys) in domains.items():
        X = np.asarray(X, dtype=dtype)
        if name == target_domain:
            datasets.append(ClientDataset(X, None, TARGET, name))
            if all(y != "" for y in ys):
                truth = np.array([index[y] for y in ys], dtype=int)
        else:
            datasets.append(ClientDataset(X, one_hot([index[y] for y in ys], len(classes)), SOURCE, name))
    return DomainData(datasets, truth, classes)

"""Bag datasets: binary bag files, JSON manifests, synthetic generators.

Bag file layout: magic ``IGTB``, u32 N, u32 d_in, u32 label, then N
little-endian float32 coordinate pairs, then N x d_in little-endian
float32 features.  A dataset manifest is a JSON file with the class
names, d_in, and per-split lists of bag file paths.

The two synthetic tasks are built so that each model branch is
individually load-bearing:

- ``spatial-motif``: every bag contains both salient instance types (A
  and B) in matching numbers, so bag-level feature statistics carry no
  label signal at all.  A bag is positive exactly when some A instance
  and some B instance sit in adjacent grid cells (Euclidean distance at
  most ``ADJACENT_RADIUS`` after jitter); negative bags keep every A-B
  pair at least ``FAR_CELL_GAP`` cells apart.  Only the neighborhood
  structure can reveal the label.

- ``long-range``: a bag is positive when salient types C and D are both
  present anywhere, negative when exactly one of them occurs (with the
  same total salient count either way).  C and D cells are always
  separated by at least ``FAR_CELL_GAP`` cells, so no graph edge ever
  joins them and the conjunction must travel beyond local messages.

Instances sit on a jittered unit grid.  With jitter 0.1 every pair of
Chebyshev-1 cells is strictly nearer than any Chebyshev-2 pair, so the
8-NN graph contains all cell-adjacent pairs; and a gap of 4 cells is
strictly farther than any Chebyshev-2 pair, so separated groups can
never be joined by an edge.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GenerationError, IngestionError
from .seeding import rng_for

BAG_MAGIC = b"IGTB"

# with jitter 0.1 the largest distance between Chebyshev-1 cells is
# sqrt(2)*1.2 ~ 1.697 and the smallest between Chebyshev-2 cells is 1.8, so
# a radius of 1.75 marks exactly the cell-adjacent pairs (which are always
# 8-NN graph edges); groups FAR_CELL_GAP cells apart stay >= 3.8 away and
# can never be joined by an edge
JITTER = 0.1
ADJACENT_RADIUS = 1.75
FAR_CELL_GAP = 4
PROTOTYPE_NORM = 3.0

TASKS = ("spatial-motif", "long-range", "hybrid")
SPLIT_RATIOS = {"train": 0.65, "val": 0.15, "test": 0.20}


@dataclass
class BagRecord:
    """One bag; ``instance_types``/``task`` are generator-side metadata
    (0 = background, 1 = A/C, 2 = B/D) and are not persisted to disk."""

    name: str
    coords: np.ndarray
    features: np.ndarray
    label: int
    instance_types: np.ndarray | None = None
    task: str | None = None

    @property
    def n_instances(self) -> int:
        return len(self.coords)


@dataclass
class BagDataset:
    classes: list[str]
    d_in: int
    splits: dict[str, list[BagRecord]] = field(default_factory=dict)

    def all_records(self) -> list[BagRecord]:
        return [r for split in self.splits.values() for r in split]


@dataclass
class SynthSpec:
    task: str = "spatial-motif"
    n_bags: int = 500
    n_min: int = 64
    n_max: int = 256
    d_in: int = 64
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.n_min < 16:
            raise ConfigurationError(f"n_min must be >= 16, got {self.n_min}")
        if self.n_min > self.n_max:
            raise ConfigurationError(f"n_min {self.n_min} > n_max {self.n_max}")
        if self.d_in < 4:
            raise ConfigurationError(f"d_in must be >= 4 to hold the prototype directions")
        if self.n_bags < 2:
            raise ConfigurationError("need at least 2 bags")


# ---------------------------------------------------------------------------
# bag files and manifests
# ---------------------------------------------------------------------------

def write_bag(path: str | Path, coords: np.ndarray, features: np.ndarray, label: int) -> None:
    coords = np.ascontiguousarray(coords, dtype="<f4")
    features = np.ascontiguousarray(features, dtype="<f4")
    n, d_in = features.shape
    if coords.shape != (n, 2):
        raise IngestionError(f"{path}: coords shape {coords.shape} does not match {n} instances")
    with open(path, "wb") as f:
        f.write(BAG_MAGIC)
        f.write(struct.pack("<III", n, d_in, label))
        f.write(coords.tobytes())
        f.write(features.tobytes())


def read_bag(path: str | Path) -> tuple[np.ndarray, np.ndarray, int]:
    blob = Path(path).read_bytes()
    if blob[:4] != BAG_MAGIC:
        raise IngestionError(f"{path}: bad magic {blob[:4]!r}, expected {BAG_MAGIC!r}")
    if len(blob) < 16:
        raise IngestionError(f"{path}: truncated header, got {len(blob)} bytes, need 16")
    n, d_in, label = struct.unpack_from("<III", blob, 4)
    expected = 16 + n * 2 * 4 + n * d_in * 4
    if len(blob) != expected:
        raise IngestionError(f"{path}: expected {expected} bytes, got {len(blob)} "
                             f"(payload starts at offset 16)")
    coords = np.frombuffer(blob, dtype="<f4", count=n * 2, offset=16).reshape(n, 2)
    features = np.frombuffer(blob, dtype="<f4", count=n * d_in,
                             offset=16 + n * 8).reshape(n, d_in)
    return coords.astype(np.float32), features.astype(np.float32), int(label)


def write_dataset(dataset: BagDataset, out_dir: str | Path) -> Path:
    """Write bags plus manifest.json; returns the manifest path."""
    out = Path(out_dir)
    (out / "bags").mkdir(parents=True, exist_ok=True)
    manifest: dict = {"classes": dataset.classes, "d_in": dataset.d_in, "splits": {}}
    for split, records in dataset.splits.items():
        paths = []
        for rec in records:
            rel = f"bags/{rec.name}.igtb"
            write_bag(out / rel, rec.coords, rec.features, rec.label)
            paths.append(rel)
        manifest["splits"][split] = paths
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def read_dataset(manifest_path: str | Path) -> BagDataset:
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise IngestionError(f"manifest not found: {manifest_path}")
    except json.JSONDecodeError as e:
        raise IngestionError(f"{manifest_path}: invalid JSON ({e})")
    for key in ("classes", "d_in", "splits"):
        if key not in manifest:
            raise IngestionError(f"{manifest_path}: manifest missing key {key!r}")
    base = manifest_path.parent
    dataset = BagDataset(classes=list(manifest["classes"]), d_in=int(manifest["d_in"]))
    for split, paths in manifest["splits"].items():
        records = []
        for rel in paths:
            bag_path = base / rel
            if not bag_path.exists():
                raise IngestionError(f"{manifest_path}: referenced bag file missing: {bag_path}")
            coords, features, label = read_bag(bag_path)
            if features.shape[1] != dataset.d_in:
                raise IngestionError(f"{bag_path}: d_in {features.shape[1]} != manifest {dataset.d_in}")
            if label >= len(dataset.classes):
                raise IngestionError(f"{bag_path}: label {label} out of range")
            records.append(BagRecord(name=Path(rel).stem, coords=coords,
                                     features=features, label=label))
        dataset.splits[split] = records
    return dataset


# ---------------------------------------------------------------------------
# label oracles
# ---------------------------------------------------------------------------

def spatial_motif_label(coords: np.ndarray, types: np.ndarray) -> int:
    """1 iff some type-1 and type-2 instances lie within ADJACENT_RADIUS."""
    a = coords[types == 1]
    b = coords[types == 2]
    if len(a) == 0 or len(b) == 0:
        return 0
    diff = a[:, None, :] - b[None, :, :]
    return int((np.sqrt((diff ** 2).sum(axis=2)) <= ADJACENT_RADIUS).any())


def long_range_label(types: np.ndarray) -> int:
    """1 iff both salient types occur anywhere in the bag."""
    return int(bool((types == 1).any() and (types == 2).any()))


def oracle_label(record: BagRecord) -> int:
    """Recompute a generated bag's label from its geometry/type metadata."""
    if record.instance_types is None or record.task is None:
        raise GenerationError(f"bag {record.name}: no generator metadata to recompute the label")
    if record.task == "spatial-motif":
        return spatial_motif_label(record.coords, record.instance_types)
    return long_range_label(record.instance_types)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def prototype_matrix(task: str, d_in: int) -> np.ndarray:
    """Rows 0..2: background, first salient type, second salient type."""
    protos = np.zeros((3, d_in), dtype=np.float64)
    if task == "spatial-motif":
        protos[1, 0] = PROTOTYPE_NORM
        protos[2, 1] = PROTOTYPE_NORM
    else:
        protos[1, 2] = PROTOTYPE_NORM
        protos[2, 3] = PROTOTYPE_NORM
    return protos


def _grid_cells(n: int) -> np.ndarray:
    """First n cells of the smallest square grid, row-major (col, row)."""
    g = math.ceil(math.sqrt(n))
    idx = np.arange(n)
    return np.stack([idx % g, idx // g], axis=1).astype(np.int64)


def _split_regions(cells: np.ndarray, need_a: int, need_b: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Indices of two cell groups separated by >= FAR_CELL_GAP cells."""
    for _ in range(64):
        axis = int(rng.integers(0, 2))
        coord = cells[:, axis]
        hi = coord.max()
        s = int(rng.integers(1, max(2, hi - FAR_CELL_GAP + 2)))
        side_a = np.flatnonzero(coord <= s - 1)
        side_b = np.flatnonzero(coord >= s + FAR_CELL_GAP - 1)
        if rng.integers(0, 2):
            side_a, side_b = side_b, side_a
        if len(side_a) >= need_a and len(side_b) >= need_b:
            return side_a, side_b
    raise GenerationError(f"could not split {len(cells)} cells into groups of "
                          f"{need_a} and {need_b} with gap {FAR_CELL_GAP}")


def _jittered_coords(cells: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (cells.astype(np.float64) + rng.uniform(-JITTER, JITTER, size=cells.shape)).astype(np.float32)


def _compact_blob(cells: np.ndarray, allowed: np.ndarray, rng: np.random.Generator,
                  parity_counts: tuple[int, int] | None = None,
                  size: int | None = None) -> np.ndarray | None:
    """Instance indices forming a compact cell cluster inside ``allowed``.

    Grows nearest-first (Chebyshev, then Euclidean, then index) around a
    random allowed center.  With ``parity_counts`` = (even, odd) the blob
    takes exactly that many cells of each checkerboard parity, so two
    instance types assigned by parity interleave into guaranteed
    cell-adjacent contact; with ``size`` it just takes the nearest cells.
    """
    if len(allowed) == 0:
        return None
    center = cells[rng.choice(allowed)]
    rel = cells[allowed] - center
    cheb = np.abs(rel).max(axis=1)
    sq = (rel ** 2).sum(axis=1)
    order = allowed[np.lexsort((allowed, sq, cheb))]
    if parity_counts is None:
        return order[:size] if len(order) >= size else None
    want = list(parity_counts)
    picked = []
    for idx in order:
        p = int(cells[idx].sum()) % 2
        if want[p] > 0:
            want[p] -= 1
            picked.append(idx)
            if want == [0, 0]:
                return np.array(picked, dtype=np.int64)
    return None


def _make_features(types: np.ndarray, protos: np.ndarray, noise: float,
                   rng: np.random.Generator) -> np.ndarray:
    base = protos[types]
    return (base + noise * rng.standard_normal(base.shape)).astype(np.float32)


def _gen_spatial_motif_bag(spec: SynthSpec, index: int, label: int) -> BagRecord:
    """One spatial-motif bag.

    Both classes hold compact salient blobs with identical (n_A, n_B)
    count distributions; positives interleave the two types in one
    checkerboard blob (every A there touches B cells), negatives place
    the A blob and the B blob at least FAR_CELL_GAP cells apart.  Feature
    statistics are therefore class-independent and only the neighborhood
    geometry carries the label.
    """
    rng = rng_for(spec.seed, "bag", index)
    for _ in range(64):
        n = int(rng.integers(spec.n_min, spec.n_max + 1))
        cells = _grid_cells(n)
        n_a = int(rng.integers(3, 7))
        n_b = int(rng.integers(3, 7))
        types = np.zeros(n, dtype=np.int64)

        if label == 1:
            counts = (n_a, n_b) if rng.integers(0, 2) == 0 else (n_b, n_a)
            blob = _compact_blob(cells, np.arange(n), rng, parity_counts=counts)
            if blob is None:
                continue
            for idx in blob:
                parity = int(cells[idx].sum()) % 2
                types[idx] = (1 if parity == 0 else 2) if counts == (n_a, n_b) \
                    else (2 if parity == 0 else 1)
        else:
            side_a, side_b = _split_regions(cells, n_a, n_b, rng)
            blob_a = _compact_blob(cells, side_a, rng, size=n_a)
            blob_b = _compact_blob(cells, side_b, rng, size=n_b)
            if blob_a is None or blob_b is None:
                continue
            types[blob_a] = 1
            types[blob_b] = 2

        coords = _jittered_coords(cells, rng)
        rec = BagRecord(name=f"sm-{index:05d}", coords=coords,
                        features=_make_features(types, prototype_matrix("spatial-motif", spec.d_in),
                                                spec.noise, rng),
                        label=label, instance_types=types, task="spatial-motif")
        if spatial_motif_label(coords, types) == label:
            return rec
    raise GenerationError(f"spatial-motif bag {index}: placement failed after bounded retries")


def _gen_long_range_bag(spec: SynthSpec, index: int, label: int) -> BagRecord:
    """One long-range bag.

    Positives hold n_C and n_D instances of both salient types (2..4
    each), negatives hold a single type whose count is drawn as the sum
    of the same two draws, so the total salient count carries no label
    signal.  Salient cells always keep at least FAR_CELL_GAP cells
    between the two type groups, so no graph edge ever joins C to D.
    """
    rng = rng_for(spec.seed, "bag", index)
    n = int(rng.integers(spec.n_min, spec.n_max + 1))
    cells = _grid_cells(n)
    n_c = int(rng.integers(2, 5))
    n_d = int(rng.integers(2, 5))
    types = np.zeros(n, dtype=np.int64)
    if label == 1:
        side_c, side_d = _split_regions(cells, n_c, n_d, rng)
        types[rng.choice(side_c, size=n_c, replace=False)] = 1
        types[rng.choice(side_d, size=n_d, replace=False)] = 2
    else:
        lone = 1 if rng.integers(0, 2) == 0 else 2
        side, _ = _split_regions(cells, n_c + n_d, 0, rng)
        types[rng.choice(side, size=n_c + n_d, replace=False)] = lone

    coords = _jittered_coords(cells, rng)
    rec = BagRecord(name=f"lr-{index:05d}", coords=coords,
                    features=_make_features(types, prototype_matrix("long-range", spec.d_in),
                                            spec.noise, rng),
                    label=label, instance_types=types, task="long-range")
    assert long_range_label(types) == label
    return rec


def _assemble(spec: SynthSpec, records: list[BagRecord]) -> BagDataset:
    order = rng_for(spec.seed, "split").permutation(len(records))
    n_train = int(len(records) * SPLIT_RATIOS["train"])
    n_val = int(len(records) * SPLIT_RATIOS["val"])
    dataset = BagDataset(classes=["negative", "positive"], d_in=spec.d_in)
    dataset.splits = {
        "train": [records[i] for i in order[:n_train]],
        "val": [records[i] for i in order[n_train:n_train + n_val]],
        "test": [records[i] for i in order[n_train + n_val:]],
    }
    return dataset


def gen_spatial_motif(spec: SynthSpec) -> BagDataset:
    if spec.task != "spatial-motif":
        raise ConfigurationError(f"spec.task is {spec.task!r}")
    records = [_gen_spatial_motif_bag(spec, i, i % 2) for i in range(spec.n_bags)]
    return _assemble(spec, records)


def gen_long_range(spec: SynthSpec) -> BagDataset:
    if spec.task != "long-range":
        raise ConfigurationError(f"spec.task is {spec.task!r}")
    records = [_gen_long_range_bag(spec, i, i % 2) for i in range(spec.n_bags)]
    return _assemble(spec, records)


def gen_hybrid(spec: SynthSpec) -> BagDataset:
    """Even bag indices follow the spatial recipe, odd ones the long-range
    recipe; labels stay balanced within each half."""
    if spec.task != "hybrid":
        raise ConfigurationError(f"spec.task is {spec.task!r}")
    records = []
    for i in range(spec.n_bags):
        label = (i // 2) % 2
        if i % 2 == 0:
            records.append(_gen_spatial_motif_bag(spec, i, label))
        else:
            records.append(_gen_long_range_bag(spec, i, label))
    return _assemble(spec, records)


def generate_dataset(spec: SynthSpec) -> BagDataset:
    if spec.task == "spatial-motif":
        return gen_spatial_motif(spec)
    if spec.task == "long-range":
        return gen_long_range(spec)
    return gen_hybrid(spec)

"""On-disk bundle format and in-memory data model.

A bundle is a directory::

    manifest.json          shapes, dtype, layout tag, gene ids, control label
    metadata.tsv           sample_id, perturbation, batch, is_control, cell_line
    expression.f32         optional, little-endian float32, row-major
    embeddings/<name>.f32  zero or more, same encoding

Everything is validated on load and before write; a loaded `Dataset` is
treated as immutable.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONTROL_LABEL = "non-targeting"
LAYOUTS = ("raw_counts", "lognorm")
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f4")
_META_COLUMNS = ("sample_id", "perturbation", "batch", "is_control", "cell_line")


class BundleError(ValueError):
    """Raised when a bundle, matrix or link database fails validation."""


@dataclass(frozen=True)
class Metadata:
    """Per-sample annotations, stored column-wise."""

    sample_id: np.ndarray
    perturbation: np.ndarray
    batch: np.ndarray
    is_control: np.ndarray
    cell_line: np.ndarray | None = None
    control_label: str = CONTROL_LABEL

    def __post_init__(self):
        for name in ("sample_id", "perturbation", "batch"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=str))
        object.__setattr__(self, "is_control", np.asarray(self.is_control, dtype=bool))
        if self.cell_line is not None:
            object.__setattr__(self, "cell_line", np.asarray(self.cell_line, dtype=str))
        self.validate()

    @classmethod
    def from_labels(cls, perturbation, batch, sample_id=None, cell_line=None,
                    control_label=CONTROL_LABEL):
        perturbation = np.asarray(perturbation, dtype=str)
        if sample_id is None:
            sample_id = np.array([f"s{i}" for i in range(len(perturbation))])
        return cls(sample_id=sample_id, perturbation=perturbation, batch=batch,
                   is_control=perturbation == control_label, cell_line=cell_line,
                   control_label=control_label)

    def __len__(self):
        return len(self.sample_id)

    def validate(self):
        n = len(self.sample_id)
        cols = [self.perturbation, self.batch, self.is_control]
        if self.cell_line is not None:
            cols.append(self.cell_line)
        if any(c.ndim != 1 or len(c) != n for c in cols):
            raise BundleError("metadata columns have inconsistent lengths")
        if len(np.unique(self.sample_id)) != n:
            raise BundleError("sample_id values are not unique")
        expected = self.perturbation == self.control_label
        if not np.array_equal(expected, self.is_control):
            bad = int(np.flatnonzero(expected != self.is_control)[0])
            raise BundleError(
                f"is_control disagrees with perturbation label at row {bad} "
                f"(control label is {self.control_label!r})"
            )

    def subset(self, rows) -> "Metadata":
        rows = np.asarray(rows)
        return Metadata(
            sample_id=self.sample_id[rows],
            perturbation=self.perturbation[rows],
            batch=self.batch[rows],
            is_control=self.is_control[rows],
            cell_line=None if self.cell_line is None else self.cell_line[rows],
            control_label=self.control_label,
        )

    @property
    def batches(self) -> list[str]:
        return sorted(np.unique(self.batch).tolist())

    @property
    def perturbations(self) -> list[str]:
        """Sorted non-control perturbation labels."""
        return sorted(np.unique(self.perturbation[~self.is_control]).tolist())


@dataclass(frozen=True)
class ExpressionMatrix:
    values: np.ndarray
    gene_ids: tuple[str, ...]
    layout_tag: str = "raw_counts"

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))
        object.__setattr__(self, "gene_ids", tuple(str(g) for g in self.gene_ids))
        self.validate()

    def validate(self):
        if self.layout_tag not in LAYOUTS:
            raise BundleError(f"unknown layout_tag {self.layout_tag!r}")
        v = self.values
        if v.ndim != 2:
            raise BundleError("expression values must be a 2-D matrix")
        if v.shape[1] != len(self.gene_ids):
            raise BundleError(
                f"expression has {v.shape[1]} columns but {len(self.gene_ids)} gene ids"
            )
        if len(set(self.gene_ids)) != len(self.gene_ids):
            raise BundleError("gene_ids are not unique")
        if not np.all(np.isfinite(v)):
            raise BundleError("expression contains non-finite values")
        if self.layout_tag == "raw_counts" and v.size and v.min() < 0:
            raise BundleError("raw_counts expression contains negative values")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_genes(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class EmbeddingMatrix:
    values: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        v = np.asarray(self.values)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[1] < 1:
            raise BundleError("embedding must be a 2-D matrix with dim >= 1")
        if not np.all(np.isfinite(v)):
            raise BundleError("embedding contains non-finite values")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


@dataclass(frozen=True)
class Dataset:
    metadata: Metadata
    expression: ExpressionMatrix | None = None
    embeddings: dict[str, EmbeddingMatrix] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        n = len(self.metadata)
        if self.expression is not None and self.expression.n_samples != n:
            raise BundleError(
                f"row mismatch: expression has {self.expression.n_samples} rows, "
                f"metadata has {n}"
            )
        for name, emb in self.embeddings.items():
            if emb.n_samples != n:
                raise BundleError(
                    f"row mismatch: embedding {name!r} has {emb.n_samples} rows, "
                    f"metadata has {n}"
                )

    @property
    def n_samples(self) -> int:
        return len(self.metadata)

    def with_embedding(self, name: str, emb: EmbeddingMatrix) -> "Dataset":
        embeddings = dict(self.embeddings)
        embeddings[name] = emb
        return Dataset(self.metadata, self.expression, embeddings)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        expr = None
        if self.expression is not None:
            expr = ExpressionMatrix(self.expression.values[rows],
                                    self.expression.gene_ids,
                                    self.expression.layout_tag)
        embs = {k: EmbeddingMatrix(v.values[rows], v.provenance)
                for k, v in self.embeddings.items()}
        return Dataset(self.metadata.subset(rows), expr, embs)


# ---------------------------------------------------------------------------
# bundle I/O
# ---------------------------------------------------------------------------

def _write_f32(path: Path, values: np.ndarray):
    np.ascontiguousarray(values, dtype=_DTYPE).tofile(path)


def _read_f32(path: Path, shape) -> np.ndarray:
    if not path.exists():
        raise BundleError(f"missing payload {path.name}")
    data = np.fromfile(path, dtype=_DTYPE)
    n_expected = int(np.prod(shape))
    if data.size != n_expected:
        rows = data.size // shape[1] if shape[1] else 0
        raise BundleError(
            f"row mismatch: {path.name} holds {data.size} values "
            f"(~{rows} rows), manifest says {tuple(shape)}"
        )
    return data.reshape(shape).astype(np.float32, copy=False)


def write_bundle(dataset: Dataset, path) -> None:
    """Write `dataset` to directory `path` (created if needed)."""
    dataset.validate()
    if dataset.expression is None and not dataset.embeddings:
        raise BundleError("nothing to write: no expression and no embeddings")
    for name in dataset.embeddings:
        if not name or "/" in name or name.startswith("."):
            raise BundleError(f"invalid embedding name {name!r}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = dataset.metadata
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_samples": len(meta),
        "dtype": "float32",
        "endianness": "little",
        "order": "row-major",
        "control_label": meta.control_label,
        "metadata_columns": list(_META_COLUMNS),
        "expression": None,
        "embeddings": {},
    }
    if dataset.expression is not None:
        expr = dataset.expression
        _write_f32(path / "expression.f32", expr.values)
        manifest["expression"] = {
            "file": "expression.f32",
            "shape": [expr.n_samples, expr.n_genes],
            "layout_tag": expr.layout_tag,
            "gene_ids": list(expr.gene_ids),
        }
    if dataset.embeddings:
        (path / "embeddings").mkdir(exist_ok=True)
    for name in sorted(dataset.embeddings):
        emb = dataset.embeddings[name]
        _write_f32(path / "embeddings" / f"{name}.f32", emb.values)
        manifest["embeddings"][name] = {
            "file": f"embeddings/{name}.f32",
            "shape": [emb.n_samples, emb.dim],
            "provenance": emb.provenance,
        }
    with open(path / "metadata.tsv", "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(_META_COLUMNS)
        cell_line = meta.cell_line if meta.cell_line is not None else [""] * len(meta)
        for row in zip(meta.sample_id, meta.perturbation, meta.batch,
                       meta.is_control, cell_line):
            w.writerow([row[0], row[1], row[2], "true" if row[3] else "false", row[4]])
    with open(path / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_metadata(path: Path, control_label: str) -> Metadata:
    if not path.exists():
        raise BundleError("missing metadata.tsv")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0][:4]) != _META_COLUMNS[:4]:
        raise BundleError(f"metadata.tsv header must start with {_META_COLUMNS[:4]}")
    header = rows[0]
    body = rows[1:]
    if any(len(r) != len(header) for r in body):
        raise BundleError("metadata.tsv has ragged rows")
    cols = list(zip(*body)) if body else [()] * len(header)
    flags = []
    for v in cols[3]:
        if v.lower() not in ("true", "false", "1", "0"):
            raise BundleError(f"bad is_control value {v!r}")
        flags.append(v.lower() in ("true", "1"))
    cell_line = None
    if len(header) > 4 and any(cols[4]):
        cell_line = np.array(cols[4], dtype=str)
    return Metadata(sample_id=np.array(cols[0], dtype=str),
                    perturbation=np.array(cols[1], dtype=str),
                    batch=np.array(cols[2], dtype=str),
                    is_control=np.array(flags, dtype=bool),
                    cell_line=cell_line, control_label=control_label)


def load_bundle(path) -> Dataset:
    """Load and validate a bundle directory.

    Raises
    ------
    BundleError
        Missing manifest, unknown layout tag, row-count mismatch between
        payloads, or non-finite values.
    """
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise BundleError(f"missing manifest: {mpath}")
    with open(mpath) as fh:
        manifest = json.load(fh)
    if manifest.get("endianness", "little") != "little" or manifest.get("dtype") != "float32":
        raise BundleError("only little-endian float32 payloads are supported")
    meta = _read_metadata(path / "metadata.tsv",
                          manifest.get("control_label", CONTROL_LABEL))
    n = len(meta)
    if manifest.get("n_samples", n) != n:
        raise BundleError(
            f"row mismatch: manifest says {manifest['n_samples']} samples, "
            f"metadata has {n}"
        )
    expr = None
    spec = manifest.get("expression")
    if spec is not None:
        if spec.get("layout_tag") not in LAYOUTS:
            raise BundleError(f"unknown layout_tag {spec.get('layout_tag')!r}")
        shape = tuple(spec["shape"])
        if shape[0] != n:
            raise BundleError(f"row mismatch: expression has {shape[0]} rows, metadata has {n}")
        expr = ExpressionMatrix(_read_f32(path / spec["file"], shape),
                                spec["gene_ids"], spec["layout_tag"])
    embs = {}
    for name, spec in manifest.get("embeddings", {}).items():
        shape = tuple(spec["shape"])
        if shape[0] != n:
            raise BundleError(f"row mismatch: embedding {name!r} has {shape[0]} rows, metadata has {n}")
        embs[name] = EmbeddingMatrix(_read_f32(path / spec["file"], shape),
                                     spec.get("provenance", ""))
    if expr is None and not embs:
        raise BundleError("bundle has neither expression nor embeddings")
    return Dataset(meta, expr, embs)


# ---------------------------------------------------------------------------
# link databases
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkDatabase:
    """Unordered gene pairs, stored as lexicographically sorted tuples."""

    name: str
    links: frozenset
    n_duplicates: int = 0
    n_self_links: int = 0

    def __len__(self):
        return len(self.links)

    @classmethod
    def from_pairs(cls, pairs, name: str = "db") -> "LinkDatabase":
        links = set()
        dup = selfl = 0
        for a, b in pairs:
            a, b = str(a), str(b)
            if a == b:
                selfl += 1
                continue
            key = (a, b) if a < b else (b, a)
            if key in links:
                dup += 1
            links.add(key)
        return cls(name, frozenset(links), dup, selfl)

    def restrict(self, universe) -> "LinkDatabase":
        universe = set(universe)
        kept = frozenset(p for p in self.links if p[0] in universe and p[1] in universe)
        return LinkDatabase(self.name, kept)


def load_link_db(path, name: str | None = None) -> LinkDatabase:
    """Read a two-column TSV edge list; ``#`` starts a comment line."""
    path = Path(path)
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise BundleError(f"{path.name}:{lineno}: malformed row {line!r}")
            pairs.append((parts[0].strip(), parts[1].strip()))
    if not pairs:
        raise BundleError(f"empty database: {path}")
    return LinkDatabase.from_pairs(pairs, name or path.stem)


def write_link_db(db: LinkDatabase, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {db.name}\n")
        for a, b in sorted(db.links):
            fh.write(f"{a}\t{b}\n")


def bundle_checksum(path) -> str:
    """sha256 over every payload file in a bundle, in sorted path order."""
    import hashlib

    path = Path(path)
    h = hashlib.sha256()
    for root, _, files in sorted(os.walk(path)):
        for f in sorted(files):
            p = Path(root) / f
            h.update(str(p.relative_to(path)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()

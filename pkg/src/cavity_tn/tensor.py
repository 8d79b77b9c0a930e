"""Labeled tensors with dense or sparse storage, and their contraction.

A :class:`Tensor` carries one hashable label per index. Contraction is
driven entirely by labels: indices sharing a label are multiplied
elementwise and summed unless the label is kept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "StackedTensorBatch",
    "ContractionError",
    "contract",
    "delta_tensor",
    "stack_by_degree",
]

# tensors at or below this density are stored sparse by default
SPARSE_DENSITY = 1 / 8
# largest dense array (entries) the contraction routines will materialize
MAX_DENSE_SIZE = 2**26


class ContractionError(ValueError):
    """Raised when tensors cannot be contracted together."""


def _readonly(a):
    a.flags.writeable = False
    return a


class Tensor:
    """An immutable labeled multi-index array.

    Parameters
    ----------
    labels : sequence of hashable
        One distinct label per index.
    data : array_like, optional
        Dense values, with ``data.ndim == len(labels)``.
    extents : sequence of int, optional
        Required for sparse construction.
    coords : (nnz, rank) int array, optional
        Sparse multi-indices. Duplicates are summed.
    values : (nnz,) float array, optional
        Sparse values matching ``coords``.
    """

    __slots__ = ("labels", "extents", "_dense", "_coords", "_values")

    def __init__(
        self,
        labels: Sequence[Hashable],
        data=None,
        *,
        extents: Sequence[int] | None = None,
        coords=None,
        values=None,
    ):
        labels = tuple(labels)
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate labels in {labels!r}")
        self.labels = labels

        if data is not None:
            if coords is not None or values is not None:
                raise ValueError("give either dense data or sparse coords/values")
            arr = np.array(data, dtype=np.float64)
            if arr.ndim != len(labels):
                raise ValueError(
                    f"{arr.ndim}-d data does not match {len(labels)} labels"
                )
            if extents is not None and tuple(extents) != arr.shape:
                raise ValueError("extents do not match data shape")
            if any(e < 1 for e in arr.shape):
                raise ValueError("extents must be positive")
            if not np.all(np.isfinite(arr)):
                raise ValueError("tensor values must be finite")
            self.extents = tuple(int(e) for e in arr.shape)
            self._dense = _readonly(arr)
            self._coords = None
            self._values = None
            return

        if extents is None:
            raise ValueError("sparse tensors need explicit extents")
        extents = tuple(int(e) for e in extents)
        if len(extents) != len(labels):
            raise ValueError("one extent per label required")
        if any(e < 1 for e in extents):
            raise ValueError("extents must be positive")
        coords = np.asarray(
            coords if coords is not None else np.zeros((0, len(labels))),
            dtype=np.int64,
        ).reshape(-1, len(labels))
        values = np.asarray(
            values if values is not None else np.zeros(0), dtype=np.float64
        ).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise ValueError("coords and values differ in length")
        if not np.all(np.isfinite(values)):
            raise ValueError("tensor values must be finite")
        if coords.size and (
            coords.min() < 0 or np.any(coords.max(axis=0) >= np.array(extents))
        ):
            raise ValueError("sparse coordinate outside extents")
        coords, values = _canonical_coo(coords, values, extents)
        self.extents = extents
        self._dense = None
        self._coords = _readonly(coords)
        self._values = _readonly(values)

    # ------------------------------------------------------------------ #
    # construction helpers

    @classmethod
    def from_array(cls, labels, data, sparse: bool | None = None) -> "Tensor":
        """Build from a dense array, choosing sparse storage when the
        density is at most ``SPARSE_DENSITY`` (or as forced by ``sparse``).
        """
        arr = np.asarray(data, dtype=np.float64)
        if sparse is None:
            sparse = arr.ndim > 0 and np.count_nonzero(arr) <= SPARSE_DENSITY * arr.size
        if not sparse:
            return cls(labels, arr)
        coords = np.argwhere(arr)
        return cls(labels, extents=arr.shape, coords=coords, values=arr[arr != 0])

    @classmethod
    def scalar(cls, value: float) -> "Tensor":
        return cls((), np.float64(value))

    # ------------------------------------------------------------------ #
    # views

    @property
    def rank(self) -> int:
        return len(self.labels)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.extents

    @property
    def size(self) -> int:
        return math.prod(self.extents)

    @property
    def is_sparse(self) -> bool:
        return self._dense is None

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return int(self._values.size)
        return int(np.count_nonzero(self._dense))

    @property
    def coords(self) -> np.ndarray:
        """Sorted multi-indices of the stored (sparse) or nonzero (dense) entries."""
        if self.is_sparse:
            return self._coords
        return np.argwhere(self._dense).reshape(-1, self.rank)

    @property
    def values(self) -> np.ndarray:
        if self.is_sparse:
            return self._values
        return self._dense[self._dense != 0].reshape(-1)

    def to_dense(self) -> np.ndarray:
        if not self.is_sparse:
            return self._dense
        if self.size > MAX_DENSE_SIZE:
            raise MemoryError(f"refusing to densify tensor of size {self.size}")
        if self.rank == 0:
            return np.array(self._values.sum())
        arr = np.zeros(self.extents)
        if self._values.size:
            arr[tuple(self._coords.T)] = self._values
        return arr

    def to_sparse(self) -> "Tensor":
        if self.is_sparse:
            return self
        return Tensor.from_array(self.labels, self._dense, sparse=True)

    def extent_of(self, label) -> int:
        return self.extents[self.labels.index(label)]

    def relabel(self, mapping) -> "Tensor":
        """Return a copy with labels substituted through ``mapping``."""
        new = tuple(mapping.get(lb, lb) for lb in self.labels)
        if self.is_sparse:
            return Tensor(new, extents=self.extents, coords=self._coords,
                          values=self._values)
        return Tensor(new, self._dense)

    def transpose(self, labels: Sequence[Hashable]) -> "Tensor":
        labels = tuple(labels)
        if len(labels) != self.rank or set(labels) != set(self.labels):
            raise ValueError(f"{labels!r} is not a permutation of {self.labels!r}")
        perm = [self.labels.index(lb) for lb in labels]
        if self.is_sparse:
            return Tensor(labels, extents=[self.extents[p] for p in perm],
                          coords=self._coords[:, perm], values=self._values)
        return Tensor(labels, np.transpose(self._dense, perm))

    def sum_labels(self, labels: Iterable[Hashable]) -> "Tensor":
        """Sum out the given labels."""
        drop = set(labels)
        return contract([self], [lb for lb in self.labels if lb not in drop])

    def __add__(self, other: "Tensor") -> "Tensor":
        other = other.transpose(self.labels)
        if other.extents != self.extents:
            raise ContractionError("extent mismatch in addition")
        if self.is_sparse and other.is_sparse:
            return Tensor(self.labels, extents=self.extents,
                          coords=np.vstack([self._coords, other._coords]),
                          values=np.concatenate([self._values, other._values]))
        return Tensor(self.labels, self.to_dense() + other.to_dense())

    def __mul__(self, alpha: float) -> "Tensor":
        if self.is_sparse:
            return Tensor(self.labels, extents=self.extents, coords=self._coords,
                          values=alpha * self._values)
        return Tensor(self.labels, alpha * self._dense)

    __rmul__ = __mul__

    def __repr__(self):
        kind = f"sparse nnz={self.nnz}" if self.is_sparse else "dense"
        return f"Tensor(labels={self.labels!r}, extents={self.extents}, {kind})"


def _canonical_coo(coords, values, extents):
    """Sort lexicographically (= flattened C order) and merge duplicates."""
    if coords.shape[0] == 0:
        return coords, values
    order = np.lexsort(coords.T[::-1]) if coords.shape[1] else np.arange(len(values))
    coords, values = coords[order], values[order]
    if coords.shape[1] == 0:
        return coords[:1], np.array([values.sum()])
    new = np.ones(len(values), dtype=bool)
    new[1:] = np.any(coords[1:] != coords[:-1], axis=1)
    if not new.all():
        starts = np.flatnonzero(new)
        values = np.add.reduceat(values, starts)
        coords = coords[starts]
    keep = values != 0
    return coords[keep], values[keep]


# ---------------------------------------------------------------------- #
# contraction


def contract(tensors: Sequence[Tensor], keep_labels: Sequence[Hashable] = ()) -> Tensor:
    """Multiply ``tensors`` over shared labels and sum every label not kept.

    The result carries exactly ``keep_labels``, in that order. An empty
    list of tensors contracts to the scalar 1.
    """
    tensors = list(tensors)
    keep = tuple(keep_labels)
    if len(set(keep)) != len(keep):
        raise ValueError(f"duplicate keep labels {keep!r}")

    extent = {}
    for t in tensors:
        for lb, e in zip(t.labels, t.extents):
            if extent.setdefault(lb, e) != e:
                raise ContractionError(
                    f"label {lb!r} has extents {extent[lb]} and {e}"
                )
    for lb in keep:
        if lb not in extent:
            raise ValueError(f"keep label {lb!r} not present in any tensor")

    if not tensors:
        return Tensor.scalar(1.0)

    sparse = [t for t in tensors if t.is_sparse]
    if not sparse:
        return Tensor.from_array(keep, _dense_contract(tensors, keep, extent))

    # single sparse tensor, everything else indexes into its labels
    if len(sparse) == 1:
        (s,) = sparse
        pos = {lb: i for i, lb in enumerate(s.labels)}
        others = [t for t in tensors if t is not s]
        if all(lb in pos for t in others for lb in t.labels) and all(
            lb in pos for lb in keep
        ):
            w = s.values.copy()
            for t in others:
                idx = tuple(s.coords[:, pos[lb]] for lb in t.labels)
                w *= t.to_dense()[idx] if idx else t.to_dense()
            return _reduce_sparse(s.coords, w, [pos[lb] for lb in keep],
                                  keep, [extent[lb] for lb in keep])

    return _general_contract(tensors, keep, extent)


def _einsum_ids(labels_list, keep):
    ids = {}
    for labels in [*labels_list, keep]:
        for lb in labels:
            ids.setdefault(lb, len(ids))
    return ids


def _dense_contract(tensors, keep, extent):
    ids = _einsum_ids([t.labels for t in tensors], keep)
    if len(ids) <= 52:
        args = []
        for t in tensors:
            args += [t.to_dense(), [ids[lb] for lb in t.labels]]
        args.append([ids[lb] for lb in keep])
        return np.einsum(*args, optimize=len(tensors) > 2)
    # too many distinct labels for one einsum call: fold pairwise
    pending = [(t.labels, t.to_dense()) for t in tensors]
    while len(pending) > 1:
        (la, a), (lb_, b) = pending[0], pending[1]
        later = {x for lbs, _ in pending[2:] for x in lbs} | set(keep)
        out = tuple(dict.fromkeys(x for x in (*la, *lb_) if x in later))
        sub = _einsum_ids([la, lb_], out)
        c = np.einsum(a, [sub[x] for x in la], b, [sub[x] for x in lb_],
                      [sub[x] for x in out])
        pending = [(out, c), *pending[2:]]
    labels, arr = pending[0]
    extra = [x for x in labels if x not in keep]
    if extra:
        arr = arr.sum(axis=tuple(labels.index(x) for x in extra))
        labels = tuple(x for x in labels if x in keep)
    return np.transpose(arr, [labels.index(x) for x in keep])


def _reduce_sparse(coords, w, cols, keep, keep_ext):
    """Sum weighted sparse entries onto the kept columns."""
    if not cols:
        return Tensor.scalar(w.sum())
    kc = coords[:, cols]
    size = math.prod(keep_ext)
    if size <= MAX_DENSE_SIZE:
        flat = np.ravel_multi_index(tuple(kc.T), keep_ext)
        out = np.bincount(flat, weights=w, minlength=size).reshape(keep_ext)
        return Tensor.from_array(keep, out)
    return Tensor(keep, extents=keep_ext, coords=kc, values=w)


def _join(a_labels, a_coords, a_vals, b_labels, b_coords, b_vals):
    """Hash join of two sparse entry lists on their shared labels."""
    shared = [lb for lb in a_labels if lb in b_labels]
    ia = [a_labels.index(lb) for lb in shared]
    ib = [b_labels.index(lb) for lb in shared]
    b_only = [i for i, lb in enumerate(b_labels) if lb not in a_labels]
    table = {}
    for r, key in enumerate(map(tuple, b_coords[:, ib])):
        table.setdefault(key, []).append(r)
    ra, rb = [], []
    for r, key in enumerate(map(tuple, a_coords[:, ia])):
        for s in table.get(key, ()):
            ra.append(r)
            rb.append(s)
    ra = np.asarray(ra, dtype=np.int64)
    rb = np.asarray(rb, dtype=np.int64)
    labels = (*a_labels, *(b_labels[i] for i in b_only))
    coords = np.hstack([a_coords[ra], b_coords[rb][:, b_only]])
    return labels, coords, a_vals[ra] * b_vals[rb]


def _general_contract(tensors, keep, extent):
    sparse = [t for t in tensors if t.is_sparse]
    dense = [t for t in tensors if not t.is_sparse]

    labels, coords, vals = sparse[0].labels, sparse[0].coords, sparse[0].values
    for t in sparse[1:]:
        labels, coords, vals = _join(labels, coords, vals, t.labels, t.coords, t.values)
    pos = {lb: i for i, lb in enumerate(labels)}

    # every dense tensor is gathered onto the sparse rows; labels outside
    # the sparse set ride along as dense axes behind the row axis "n"
    ops = [vals, ["n"]]
    for t in dense:
        sp = [lb for lb in t.labels if lb in pos]
        rest = [lb for lb in t.labels if lb not in pos]
        arr = np.transpose(t.to_dense(), [t.labels.index(lb) for lb in sp + rest])
        arr = arr[tuple(coords[:, pos[lb]] for lb in sp)] if sp else np.broadcast_to(
            arr, (len(vals), *arr.shape))
        ops += [arr, ["n", *rest]]
    dense_keep = [lb for lb in keep if lb not in pos]
    sparse_keep = [lb for lb in keep if lb in pos]
    ids = _einsum_ids([o for o in ops[1::2]], ["n", *dense_keep])
    args = []
    for arr, lbs in zip(ops[0::2], ops[1::2]):
        args += [arr, [ids[x] for x in lbs]]
    args.append([ids[x] for x in ["n", *dense_keep]])
    block = np.einsum(*args, optimize=len(dense) > 1)

    skext = [extent[lb] for lb in sparse_keep]
    dkext = [extent[lb] for lb in dense_keep]
    if math.prod(skext) * math.prod(dkext) > MAX_DENSE_SIZE:
        raise ContractionError("contraction result too large to materialize")
    out = np.zeros((*skext, *dkext))
    if sparse_keep:
        np.add.at(out, tuple(coords[:, pos[lb]] for lb in sparse_keep), block)
    else:
        out += block.sum(axis=0)
    order = [*sparse_keep, *dense_keep]
    out = np.transpose(out, [order.index(lb) for lb in keep])
    return Tensor.from_array(keep, out)


# ---------------------------------------------------------------------- #
# special tensors and batching


def delta_tensor(extent: int, rank: int, labels: Sequence[Hashable] | None = None) -> Tensor:
    """Copy tensor: 1 where all indices agree, 0 elsewhere, stored sparse."""
    if extent < 1 or rank < 1:
        raise ValueError("delta_tensor needs extent >= 1 and rank >= 1")
    if labels is None:
        labels = tuple(range(rank))
    if len(labels) != rank:
        raise ValueError("one label per index required")
    diag = np.repeat(np.arange(extent)[:, None], rank, axis=1)
    return Tensor(labels, extents=(extent,) * rank, coords=diag, values=np.ones(extent))


@dataclass(frozen=True)
class StackedTensorBatch:
    """Same-signature tensors stacked along a leading batch index.

    ``body`` has labels ``(batch_label, 0, 1, ..., rank - 1)``: slot ``k``
    of every member sits on positional label ``k``. ``member_labels``
    records each member's own labels so slices can be restored.
    """

    batch_label: Hashable
    member_ids: tuple
    member_labels: tuple
    member_sparse: tuple
    body: Tensor

    @property
    def size(self) -> int:
        return len(self.member_ids)

    @property
    def signature(self) -> tuple[int, ...]:
        return self.body.extents[1:]

    def slice(self, s: int) -> Tensor:
        """The ``s``-th member, exactly as it was stacked."""
        labels = self.member_labels[s]
        if self.body.is_sparse:
            c = self.body.coords
            rows = c[:, 0] == s
            t = Tensor(labels, extents=self.signature, coords=c[rows, 1:],
                       values=self.body.values[rows])
            return t if self.member_sparse[s] else Tensor(labels, t.to_dense())
        arr = self.body.to_dense()[s]
        t = Tensor(labels, arr)
        return t.to_sparse() if self.member_sparse[s] else t


def stack_by_degree(
    tensors: Sequence[tuple[Hashable, Tensor]], batch_label: Hashable = "s"
) -> list[StackedTensorBatch]:
    """Group tensors by ``extents`` (and so by rank) and stack each group.

    Batches come out in order of first appearance of each signature;
    members keep their input order.
    """
    if not tensors:
        raise ValueError("stack_by_degree needs at least one tensor")
    groups: dict[tuple, list] = {}
    for nid, t in tensors:
        groups.setdefault(t.extents, []).append((nid, t))

    batches = []
    for sig, members in groups.items():
        rank = len(sig)
        labels = (batch_label, *range(rank))
        if any(t.is_sparse for _, t in members):
            coords, values = [], []
            for s, (_, t) in enumerate(members):
                c = t.coords
                coords.append(np.hstack([np.full((len(c), 1), s), c]))
                values.append(t.values)
            body = Tensor(labels, extents=(len(members), *sig),
                          coords=np.vstack(coords), values=np.concatenate(values))
        else:
            body = Tensor(labels, np.stack([t.to_dense() for _, t in members]))
        batches.append(
            StackedTensorBatch(
                batch_label=batch_label,
                member_ids=tuple(nid for nid, _ in members),
                member_labels=tuple(t.labels for _, t in members),
                member_sparse=tuple(t.is_sparse for _, t in members),
                body=body,
            )
        )
    return batches

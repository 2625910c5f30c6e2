"""Visual and privacy-profile neighborhoods by exact exhaustive k-NN."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, concat_modalities
from dmfp.errors import NeighborhoodError
from dmfp.linear import ProbabilityPair

# similarities are rounded before ranking so float noise cannot reorder ties
SIM_DECIMALS = 12


class NeighborhoodKind(enum.Enum):
    VISUAL = "visual"
    PRIVACY = "privacy"


class VisualMetric(enum.Enum):
    COSINE = "cosine"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class NeighborhoodConfig:
    k_v: int = 900
    k_p: int = 100
    visual_metric: VisualMetric = VisualMetric.COSINE
    include_self: bool = False

    def __post_init__(self):
        if self.k_v < 1 or self.k_p < 1:
            raise NeighborhoodError("k_v and k_p must be at least 1")
        object.__setattr__(self, "visual_metric", VisualMetric(self.visual_metric))


@dataclass(frozen=True)
class Neighborhood:
    kind: NeighborhoodKind
    member_ids: tuple[str, ...]
    similarities: tuple[float, ...]
    indices: tuple[int, ...] = ()

    def __len__(self) -> int:
        return len(self.member_ids)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "ids": list(self.member_ids),
                "similarities": list(self.similarities)}


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise NeighborhoodError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _unit_rows(M: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    return np.divide(M, norms, out=np.zeros_like(M), where=norms > 0)


def similarity_matrix(Q: np.ndarray, R: np.ndarray, metric: VisualMetric = VisualMetric.COSINE) -> np.ndarray:
    """Pairwise similarities, rounded; Euclidean similarity is negated distance."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if Q.shape[1] != R.shape[1]:
        raise NeighborhoodError(f"dimension mismatch: {Q.shape[1]} vs {R.shape[1]}")
    if metric is VisualMetric.COSINE:
        S = _unit_rows(Q) @ _unit_rows(R).T
    else:
        sq = (Q * Q).sum(1)[:, None] + (R * R).sum(1)[None, :] - 2.0 * Q @ R.T
        S = -np.sqrt(np.maximum(sq, 0.0))
    return np.round(S, SIM_DECIMALS)


def rank_neighbors(S: np.ndarray, k: int, id_rank: np.ndarray,
                   exclude: np.ndarray | None = None) -> np.ndarray:
    """Top-k column indices per row of S, by similarity then ascending id.

    ``exclude`` gives, per row, a reference index to drop (-1 for none).
    Returns an int array of shape (rows, min(k, n)); slots left over after
    an exclusion hold -1.
    """
    S = np.array(S, dtype=np.float64, copy=True)
    rows, n = S.shape
    k = min(k, n)
    id_keys = np.broadcast_to(np.asarray(id_rank), S.shape)
    if exclude is not None:
        has = np.flatnonzero(exclude >= 0)
        # excluded entries sort after everything, then get blanked
        S[has, exclude[has]] = -np.inf
    order = np.lexsort((id_keys, -S), axis=-1)[:, :k]
    if exclude is not None:
        order = np.where(order == np.asarray(exclude)[:, None], -1, order)
    return order


def _self_index(query_ids, ids_index: dict) -> np.ndarray:
    return np.array([ids_index.get(q, -1) for q in query_ids], dtype=np.int64)


def _take(S, idx):
    sims = np.take_along_axis(S, np.maximum(idx, 0), axis=1)
    return np.where(idx >= 0, sims, np.nan)


def visual_neighbor_indices(Q: np.ndarray, query_ids, reference: LabeledDataset,
                            cfg: NeighborhoodConfig) -> tuple[np.ndarray, np.ndarray]:
    """Batch form of `visual_neighbors`: (indices, similarities) per query row."""
    if len(reference) == 0:
        raise NeighborhoodError("reference set is empty")
    S = similarity_matrix(Q, reference.concat, cfg.visual_metric)
    exclude = None if cfg.include_self else _self_index(query_ids, reference.index)
    idx = rank_neighbors(S, cfg.k_v, reference.id_rank, exclude)
    return idx, _take(S, idx)


def privacy_neighbor_indices(P: np.ndarray, query_ids, ref_ids, ref_rank: np.ndarray,
                             reference_profiles: np.ndarray,
                             cfg: NeighborhoodConfig) -> tuple[np.ndarray, np.ndarray]:
    if len(reference_profiles) == 0:
        raise NeighborhoodError("reference set is empty")
    S = similarity_matrix(P, reference_profiles, VisualMetric.COSINE)
    index = {rid: i for i, rid in enumerate(ref_ids)}
    exclude = None if cfg.include_self else _self_index(query_ids, index)
    idx = rank_neighbors(S, cfg.k_p, ref_rank, exclude)
    return idx, _take(S, idx)


def _as_neighborhood(kind, ids, idx, sims) -> Neighborhood:
    keep = idx >= 0
    idx, sims = idx[keep], sims[keep]
    if len(idx) == 0:
        raise NeighborhoodError(f"empty {kind.value} neighborhood after self-exclusion")
    return Neighborhood(kind, tuple(ids[i] for i in idx),
                        tuple(float(s) for s in sims), tuple(int(i) for i in idx))


def visual_neighbors(query: FeatureRecord, reference: LabeledDataset,
                     cfg: NeighborhoodConfig) -> Neighborhood:
    q = concat_modalities(query)
    idx, sims = visual_neighbor_indices(q[None, :], [query.id], reference, cfg)
    return _as_neighborhood(NeighborhoodKind.VISUAL, reference.ids, idx[0], sims[0])


def privacy_neighbors(query_profile, reference_profiles, cfg: NeighborhoodConfig,
                      ids=None, query_id: str | None = None) -> Neighborhood:
    """The k_p reference profiles most cosine-similar to ``query_profile``.

    Without ``ids`` members are named by position ("0", "1", ...) and ties
    break by position; ``query_id`` enables self-exclusion.
    """
    P = np.asarray(reference_profiles, dtype=np.float64)
    if ids is None:
        ids = tuple(str(i) for i in range(len(P)))
        rank = np.arange(len(P))
    else:
        ids = tuple(ids)
        if len(ids) != len(P):
            raise NeighborhoodError("profile count differs from id count")
        order = sorted(range(len(ids)), key=ids.__getitem__)
        rank = np.empty(len(ids), dtype=np.int64)
        rank[order] = np.arange(len(ids))
    q = np.asarray(query_profile, dtype=np.float64)
    idx, sims = privacy_neighbor_indices(q[None, :], [query_id], ids, rank, P, cfg)
    return _as_neighborhood(NeighborhoodKind.PRIVACY, ids, idx[0], sims[0])


# -- privacy profiles -------------------------------------------------------

def profile_matrix(ds: LabeledDataset, base) -> np.ndarray:
    """(n, 6) profiles: [object.private, object.public, scene..., tag...]."""
    cols = []
    for m in MODALITIES:
        clf = base[m] if isinstance(base, dict) else base[MODALITIES.index(m)]
        p = clf.proba_private(ds.matrix(m))
        cols.extend([p, 1.0 - p])
    return np.column_stack(cols)


def privacy_profile(rec: FeatureRecord, base) -> np.ndarray:
    values = []
    for i, m in enumerate(MODALITIES):
        clf = base[m] if isinstance(base, dict) else base[i]
        p = float(clf.proba_private(rec.block(m)[None, :])[0])
        values.extend(ProbabilityPair.from_private(p).as_tuple())
    return np.array(values)

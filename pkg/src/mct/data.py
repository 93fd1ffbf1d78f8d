"""Synthetic grouped datasets and JSON persistence for datasets and models.

Two generators are provided:

* ``generate_continuous`` — each of C cluster templates is a 3-component 2-d
  Gaussian mixture whose means sit on two concentric rings (radius 4 and 8),
  variance 0.5; groups pick a template uniformly and sample i.i.d. points.
* ``generate_bars`` — 10 "bar" topics on a 5x5 grid (5 horizontal + 5 vertical,
  each uniform over its 5 cells); cluster i mixes horizontal bars {i, i+1} and
  vertical bars {i, i+1} (indices mod 5) uniformly; points are category
  indices in [0, 25).

All randomness flows through ``numpy.random.default_rng(seed)`` (PCG64), so a
given build reproduces datasets bit-for-bit; cross-version bit-equality is not
promised.  Files are single JSON documents with a ``schema_version`` field and
full-precision floats (Python's shortest round-trip float repr).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import multilevel
from .expfam import CATEGORICAL, GAUSSIAN, FamilySpec
from .multilevel import MctConfig, MctModel
from .ot import Mixture

SCHEMA_VERSION = 1

CONTINUOUS_GMM = "continuous_gmm"
BAR_TOPICS = "bar_topics"


class DataFormatError(ValueError):
    """Malformed or unsupported dataset/model file."""


@dataclass
class GroupedDataset:
    """J groups of observations with optional ground-truth cluster labels.

    ``groups[j]`` is an (n_j, d) float array for Gaussian data or an (n_j,)
    integer array of category indices for categorical data.
    """

    spec: FamilySpec
    groups: list
    group_ids: list | None = None
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.group_ids is None:
            self.group_ids = [f"g{j}" for j in range(len(self.groups))]
        if len(self.group_ids) != len(self.groups):
            raise DataFormatError("group_ids length must match number of groups")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.size != len(self.groups):
                raise DataFormatError("labels length must match number of groups")
        if self.spec.kind == GAUSSIAN:
            self.groups = [np.asarray(g, dtype=float) for g in self.groups]
            for j, g in enumerate(self.groups):
                if g.ndim != 2 or g.shape[1] != self.spec.dim:
                    raise DataFormatError(
                        f"group {j}: expected shape (n, {self.spec.dim}), got {g.shape}"
                    )
        else:
            self.groups = [np.asarray(g, dtype=int) for g in self.groups]
            for j, g in enumerate(self.groups):
                if g.ndim != 1 or (g.size and (g.min() < 0 or g.max() >= self.spec.dim)):
                    raise DataFormatError(f"group {j}: category index out of range")

    @property
    def n_groups(self) -> int:
        return len(self.groups)


@dataclass
class GeneratorConfig:
    """Parameters of a synthetic dataset.

    Defaults reproduce the standard sizes: continuous 100 groups x 500 points
    in 2-d with 6 clusters; bars 500 groups x 100 points over 25 categories
    with 5 clusters.
    """

    kind: str
    n_groups: int
    n_per_group: int
    dim: int
    n_clusters: int
    seed: int = 0
    sigma2: float = 0.5

    def __post_init__(self):
        if self.kind not in (CONTINUOUS_GMM, BAR_TOPICS):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if min(self.n_groups, self.n_per_group, self.dim, self.n_clusters) < 1:
            raise ValueError("counts must be positive")


def continuous_defaults(seed: int = 0) -> GeneratorConfig:
    return GeneratorConfig(CONTINUOUS_GMM, 100, 500, 2, 6, seed=seed)


def bars_defaults(seed: int = 0) -> GeneratorConfig:
    return GeneratorConfig(BAR_TOPICS, 500, 100, 25, 5, seed=seed)


def continuous_templates(n_clusters: int, dim: int = 2):
    """Cluster template means: per cluster one mean on the inner ring
    (radius 4) and two on the outer ring (radius 8), split by +-10 degrees."""
    if dim != 2:
        raise ValueError("continuous templates are defined for dim=2")
    delta = np.pi / 18.0
    templates = []
    for c in range(n_clusters):
        phi = 2.0 * np.pi * c / n_clusters
        means = np.array(
            [
                [4.0 * np.cos(phi), 4.0 * np.sin(phi)],
                [8.0 * np.cos(phi - delta), 8.0 * np.sin(phi - delta)],
                [8.0 * np.cos(phi + delta), 8.0 * np.sin(phi + delta)],
            ]
        )
        templates.append(means)
    return templates


def generate_continuous(config: GeneratorConfig) -> GroupedDataset:
    """Grouped 2-d Gaussian-mixture data with ring-template clusters."""
    if config.kind != CONTINUOUS_GMM:
        raise ValueError("config.kind must be continuous_gmm")
    rng = np.random.default_rng(config.seed)
    spec = FamilySpec(GAUSSIAN, config.dim, sigma2=config.sigma2)
    templates = continuous_templates(config.n_clusters, config.dim)
    labels = rng.integers(config.n_clusters, size=config.n_groups)
    sigma = np.sqrt(config.sigma2)
    groups = []
    for lab in labels:
        means = templates[lab]
        comp = rng.integers(len(means), size=config.n_per_group)
        pts = means[comp] + sigma * rng.standard_normal((config.n_per_group, config.dim))
        groups.append(pts)
    meta = {"generator": CONTINUOUS_GMM, "seed": int(config.seed)}
    return GroupedDataset(spec, groups, labels=labels, meta=meta)


def bar_topics(dim: int = 25) -> np.ndarray:
    """(10, V) topic distributions: 5 horizontal then 5 vertical bars, each
    uniform over its 5 grid cells."""
    side = int(round(np.sqrt(dim)))
    if side * side != dim:
        raise ValueError("bar topics need a square category grid")
    grid = np.arange(dim).reshape(side, side)
    topics = np.zeros((2 * side, dim))
    for r in range(side):
        topics[r, grid[r]] = 1.0 / side
    for c in range(side):
        topics[side + c, grid[:, c]] = 1.0 / side
    return topics


def bar_cluster_topic_sets(side: int = 5) -> list:
    """Cluster i uses horizontal bars {i, i+1 mod side} and the matching
    vertical bars."""
    return [
        [i, (i + 1) % side, side + i, side + ((i + 1) % side)]
        for i in range(side)
    ]


def generate_bars(config: GeneratorConfig) -> GroupedDataset:
    """Grouped categorical data from bar-topic mixtures."""
    if config.kind != BAR_TOPICS:
        raise ValueError("config.kind must be bar_topics")
    rng = np.random.default_rng(config.seed)
    spec = FamilySpec(CATEGORICAL, config.dim)
    side = int(round(np.sqrt(config.dim)))
    topics = bar_topics(config.dim)
    clusters = bar_cluster_topic_sets(side)
    if config.n_clusters > len(clusters):
        raise ValueError(f"at most {len(clusters)} bar clusters are available")
    labels = rng.integers(config.n_clusters, size=config.n_groups)
    groups = []
    for lab in labels:
        topic_ids = clusters[lab]
        t = rng.integers(len(topic_ids), size=config.n_per_group)
        probs = topics[np.asarray(topic_ids)]  # (4, V)
        # sample a cell per point from its topic's categorical
        u = rng.random(config.n_per_group)
        cdf = np.cumsum(probs, axis=1)
        cells = (u[:, None] > cdf[t]).sum(axis=1)
        groups.append(cells.astype(int))
    meta = {"generator": BAR_TOPICS, "seed": int(config.seed)}
    return GroupedDataset(spec, groups, labels=labels, meta=meta)


def generate(config: GeneratorConfig) -> GroupedDataset:
    if config.kind == CONTINUOUS_GMM:
        return generate_continuous(config)
    return generate_bars(config)


# --------------------------------------------------------------------------
# persistence


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise DataFormatError(f"{where}: missing required field {key!r}")
    return doc[key]


def _check_schema_version(doc: dict, where: str):
    version = _require(doc, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise DataFormatError(
            f"{where}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )


def dataset_to_dict(dataset: GroupedDataset) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "spec": dataset.spec.to_dict(),
        "groups": [
            {"id": gid, "points": g.tolist()}
            for gid, g in zip(dataset.group_ids, dataset.groups)
        ],
        "labels": None if dataset.labels is None else dataset.labels.tolist(),
        "meta": dataset.meta,
    }


def dataset_from_dict(doc: dict) -> GroupedDataset:
    if not isinstance(doc, dict):
        raise DataFormatError("dataset document must be a JSON object")
    _check_schema_version(doc, "dataset")
    spec = FamilySpec.from_dict(_require(doc, "spec", "dataset"))
    raw_groups = _require(doc, "groups", "dataset")
    groups, ids = [], []
    for j, g in enumerate(raw_groups):
        ids.append(_require(g, "id", f"dataset.groups[{j}]"))
        groups.append(_require(g, "points", f"dataset.groups[{j}]"))
    labels = doc.get("labels")
    return GroupedDataset(
        spec, groups, group_ids=ids, labels=labels, meta=doc.get("meta", {})
    )


def save_dataset(dataset: GroupedDataset, path):
    with open(path, "w") as fh:
        json.dump(dataset_to_dict(dataset), fh)


def load_dataset(path) -> GroupedDataset:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
    return dataset_from_dict(doc)


def mixture_to_dict(mixture: Mixture, trace=None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "spec": mixture.spec.to_dict(),
        "mixture": mixture.to_dict(),
    }
    if trace is not None:
        doc["trace"] = [float(v) for v in trace]
    return doc


def mixture_from_dict(doc: dict) -> Mixture:
    if not isinstance(doc, dict):
        raise DataFormatError("mixture document must be a JSON object")
    _check_schema_version(doc, "mixture")
    try:
        spec = FamilySpec.from_dict(_require(doc, "spec", "mixture"))
        return Mixture.from_dict(spec, _require(doc, "mixture", "mixture"))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"malformed mixture document: {exc}") from exc


def save_mixture(mixture: Mixture, path, trace=None):
    with open(path, "w") as fh:
        json.dump(mixture_to_dict(mixture, trace), fh)


def load_mixture(path) -> Mixture:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
    return mixture_from_dict(doc)


def model_to_dict(model: MctModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "spec": model.spec.to_dict(),
        "config": model.config.to_dict(),
        "locals": [m.to_dict() for m in model.local_mixtures],
        "globals": [m.to_dict() for m in model.global_mixtures],
        "plan_a": model.plan.tolist(),
        "b": model.b.tolist(),
        "trace": [float(v) for v in model.trace],
        "assignments": multilevel.assign_groups(model).tolist(),
    }


def model_from_dict(doc: dict) -> MctModel:
    if not isinstance(doc, dict):
        raise DataFormatError("model document must be a JSON object")
    _check_schema_version(doc, "model")
    try:
        spec = FamilySpec.from_dict(_require(doc, "spec", "model"))
        config = MctConfig.from_dict(_require(doc, "config", "model"))
        locals_ = [Mixture.from_dict(spec, d) for d in _require(doc, "locals", "model")]
        globals_ = [Mixture.from_dict(spec, d) for d in _require(doc, "globals", "model")]
        plan = np.asarray(_require(doc, "plan_a", "model"), dtype=float)
        b = np.asarray(_require(doc, "b", "model"), dtype=float)
        trace = [float(v) for v in _require(doc, "trace", "model")]
        model = MctModel(
            spec=spec,
            config=config,
            local_mixtures=locals_,
            global_mixtures=globals_,
            plan=plan,
            b=b,
            trace=trace,
        )
        model.validate()
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"malformed model document: {exc}") from exc
    # partial plans are recomputed deterministically from the stored mixtures
    model.partial_plans = multilevel._solve_partial_plans(model)[0]
    return model


def save_model(model: MctModel, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MctModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
    return model_from_dict(doc)

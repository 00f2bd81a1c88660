"""1-nearest-neighbor classification with invariant and baseline metrics."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import metrics
from .data import tangent_vector

METRICS = ("ed", "td", "kappa", "md-max", "md-coupled")
MODEL_METRICS = {"kappa", "md-max", "md-coupled"}


def thread_count():
    """Worker cap from ``TSA_THREADS`` (default 1, i.e. serial)."""
    try:
        return max(1, int(os.environ.get("TSA_THREADS", "1")))
    except ValueError:
        return 1


class _Prepared:
    def __init__(self, images):
        self.images = np.asarray(images, dtype=float)
        self.cols = self.images.reshape(len(self.images), -1).T
        self._tangents = None

    @property
    def tangents(self):
        if self._tangents is None:
            self._tangents = tangent_vector(self.images).reshape(len(self.images), -1).T
        return self._tangents


def _distances(metric, train, query, basis):
    A, B = train.cols, query.cols
    if metric == "ed":
        return metrics.pairwise_sq_euclidean(A, B)
    if metric == "td":
        return metrics.pairwise_sq_tangent(A, train.tangents, B, query.tangents)
    if metric == "kappa":
        return metrics.pairwise_sq_kappa(basis, A, B)
    if metric == "md-max":
        return metrics.pairwise_sq_manifold_maximal(basis, A, B)
    if metric == "md-coupled":
        return metrics.pairwise_sq_manifold_coupled(basis, A, B)
    raise ValueError(f"unknown metric {metric!r}; choose from {', '.join(METRICS)}")


def nearest_neighbors(metric, train_images, query_images, basis=None, self_exclude=False,
                      chunk=50, threads=None):
    """Index of the nearest training image for every query.

    Ties go to the lowest training index.  With ``self_exclude`` the query
    ``i`` may not match training item ``i`` (for leave-one-out on one set).
    """
    if metric in MODEL_METRICS and basis is None:
        raise ValueError(f"metric {metric!r} needs a model")
    train = _Prepared(train_images)
    query = _Prepared(query_images)
    query_tangents = query.tangents if metric == "td" else None
    if metric == "td":
        train.tangents  # noqa: B018 - compute once before fanning out
    n = len(query.images)

    def run(start):
        stop = min(start + chunk, n)
        sub = _Prepared(query.images[start:stop])
        if query_tangents is not None:
            sub._tangents = query_tangents[:, start:stop]
        d = _distances(metric, train, sub, basis)
        if self_exclude:
            rows = np.arange(stop - start)
            cols = np.arange(start, stop)
            ok = cols < d.shape[1]
            d[rows[ok], cols[ok]] = np.inf
        return np.argmin(d, axis=1)

    starts = range(0, n, chunk)
    workers = threads or thread_count()
    if workers == 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def one_nn_error(metric, train, test, basis=None, self_exclude=False, threads=None):
    """Error rate of the 1-NN classifier; ``train``/``test`` are ``LabeledImages``."""
    nn = nearest_neighbors(metric, train.images, test.images, basis, self_exclude, threads=threads)
    return float(np.mean(train.labels[nn] != test.labels))

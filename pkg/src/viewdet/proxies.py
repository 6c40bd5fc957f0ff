"""Per-view scene-proxy extraction and the online proxy cache.

The geometry learner is two set-abstraction layers applied independently to
each view: sample centroids by farthest-point sampling, group neighbours by
ball query, encode each group with a shared MLP over (relative coordinates ||
features), and max-pool per group. The first layer always emits its fixed
centroid count; only the second layer's output count (the proxy count T)
varies, so the second layer sees the same input density at any T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .config import ModelConfig, SaLayerConfig
from .errors import CacheOrderError, EmptySceneError, StateError, UnknownStreamError
from .geometry import PointCloud, Pose, ball_query, desentinelize, farthest_point_sample
from .numerics import LinearWeights


@dataclass
class SceneProxySet:
    """T local descriptors for one view: coordinates, features, validity."""

    coords: np.ndarray  # (T, 3)
    feats: np.ndarray   # (T, C)
    valid: np.ndarray   # (T,) bool
    frame: str          # "camera" | "world"
    view_index: int = 0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        self.feats = np.asarray(self.feats, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)

    def __len__(self) -> int:
        return len(self.coords)


def invalid_proxy_set(token_count: int, feature_dim: int, view_index: int = 0,
                      frame: str = "world") -> SceneProxySet:
    """All-sentinel set standing in for a dropped or empty view."""
    return SceneProxySet(
        coords=np.zeros((token_count, 3)),
        feats=np.zeros((token_count, feature_dim)),
        valid=np.zeros(token_count, dtype=bool),
        frame=frame,
        view_index=view_index,
    )


def dynamic_token_count(budget: int, view_count: int, o_sa1: int) -> int:
    """Per-view proxy count under a fixed total token budget."""
    if budget < 1 or view_count < 1 or o_sa1 < 1:
        raise ValueError("budget, view_count and o_sa1 must all be >= 1")
    return max(1, min(budget // view_count, o_sa1))


def layer_weight_names(prefix: str, cfg: SaLayerConfig) -> list[str]:
    names = []
    for i in range(len(cfg.mlp.channels) - 1):
        names.append(f"{prefix}.mlp.{i}.w")
        names.append(f"{prefix}.mlp.{i}.b")
    return names


def layer_weights(params: dict[str, np.ndarray], prefix: str,
                  cfg: SaLayerConfig) -> list[LinearWeights]:
    return [
        LinearWeights(params[f"{prefix}.mlp.{i}.w"], params[f"{prefix}.mlp.{i}.b"])
        for i in range(len(cfg.mlp.channels) - 1)
    ]


def sa_layer_forward(
    coords: np.ndarray,
    feats: np.ndarray | None,
    cfg: SaLayerConfig,
    centroid_count: int,
    weights: list[LinearWeights],
):
    """One set-abstraction layer. Returns (centroid coords, pooled feats, cache)."""
    n = len(coords)
    if n == 0:
        raise EmptySceneError("sa_layer_forward on an empty cloud")
    sel = farthest_point_sample(coords, centroid_count)
    cent = coords[sel]
    groups = ball_query(cent, coords, cfg.radius, cfg.max_group_size)
    gmax = max(len(g) for g in groups)
    # Pad each group by repeating its nearest member; duplicates cannot win the
    # argmax (first occurrence rule), so pooling and its backward are unaffected.
    idx = np.empty((centroid_count, gmax), dtype=np.int64)
    for i, g in enumerate(groups):
        idx[i, : len(g)] = g
        idx[i, len(g):] = g[0]
    rel = coords[idx] - cent[:, None, :]
    if feats is None:
        gin = rel
    else:
        gin = np.concatenate([rel, feats[idx]], axis=2)
    flat = gin.reshape(centroid_count * gmax, -1)
    h, mlp_caches = numerics.mlp_forward_cached(flat, cfg.mlp, weights)
    c_out = h.shape[-1]
    hm = h.reshape(centroid_count, gmax, c_out)
    pooled = hm.max(axis=1)
    amax = hm.argmax(axis=1)
    cache = {
        "idx": idx, "amax": amax, "mlp_caches": mlp_caches,
        "gmax": gmax, "n": n, "c_out": c_out,
        "has_feats": feats is not None,
        "in_dim": gin.shape[-1],
    }
    return cent, pooled, cache


def sa_layer_backward(
    d_pooled: np.ndarray,
    cache: dict,
    cfg: SaLayerConfig,
    weights: list[LinearWeights],
    d_weights: list[tuple[np.ndarray, np.ndarray]],
) -> np.ndarray | None:
    """Grad wrt input feats (None when the layer had no input features)."""
    m, c_out = d_pooled.shape
    gmax = cache["gmax"]
    d_h = np.zeros((m, gmax, c_out))
    rows = np.arange(m)[:, None]
    cols = np.arange(c_out)[None, :]
    d_h[rows, cache["amax"], cols] = d_pooled
    d_flat = d_h.reshape(m * gmax, c_out)
    d_gin = numerics.mlp_backward(d_flat, cfg.mlp, weights, cache["mlp_caches"], d_weights)
    if not cache["has_feats"]:
        return None
    d_gin = d_gin.reshape(m, gmax, -1)[:, :, 3:]
    d_feats = np.zeros((cache["n"], d_gin.shape[-1]))
    np.add.at(d_feats, cache["idx"], d_gin)
    return d_feats


def extract_proxies(
    view: PointCloud,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    token_count: int,
    pose: Pose | None = None,
    view_index: int = 0,
    with_cache: bool = False,
):
    """Run the geometry learner on one view.

    coord_mode "camera" keeps the learner in the view's own frame (mix to
    world afterwards); "world" transforms the raw points first, in which case
    `pose` is required and the result is already world-tagged. Views with no
    valid points yield an all-invalid set.
    """
    valid = view.valid
    coords = view.coords[valid]
    frame = "camera"
    if cfg.coord_mode == "world":
        if pose is None:
            raise ValueError("world coord_mode needs the view pose")
        coords = coords @ pose.r.T + pose.t
        frame = "world"
    if len(coords) == 0:
        result = invalid_proxy_set(token_count, cfg.feature_dim, view_index, frame)
        return (result, None) if with_cache else result

    w1 = layer_weights(params, "geometry_learner.sa1", cfg.sa1)
    w2 = layer_weights(params, "geometry_learner.sa2", cfg.sa2)
    cent1, feat1, cache1 = sa_layer_forward(coords, None, cfg.sa1, cfg.sa1.centroid_count, w1)
    # Density preservation: the second layer must always see the first
    # layer's fixed output cardinality, independent of T.
    assert len(cent1) == cfg.sa1.centroid_count
    cent2, feat2, cache2 = sa_layer_forward(cent1, feat1, cfg.sa2, token_count, w2)
    result = SceneProxySet(
        coords=cent2, feats=feat2,
        valid=np.ones(token_count, dtype=bool),
        frame=frame, view_index=view_index,
    )
    if not with_cache:
        return result
    return result, {"sa1": cache1, "sa2": cache2}


def extraction_backward(
    d_feats: np.ndarray,
    cache: dict,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate geometry-learner gradients for one view's proxy features."""
    if cache is None:
        return
    w1 = layer_weights(params, "geometry_learner.sa1", cfg.sa1)
    w2 = layer_weights(params, "geometry_learner.sa2", cfg.sa2)
    d_w2 = [
        (grads[f"geometry_learner.sa2.mlp.{i}.w"], grads[f"geometry_learner.sa2.mlp.{i}.b"])
        for i in range(len(w2))
    ]
    d_w1 = [
        (grads[f"geometry_learner.sa1.mlp.{i}.w"], grads[f"geometry_learner.sa1.mlp.{i}.b"])
        for i in range(len(w1))
    ]
    d_feat1 = sa_layer_backward(d_feats, cache["sa2"], cfg.sa2, w2, d_w2)
    sa_layer_backward(d_feat1, cache["sa1"], cfg.sa1, w1, d_w1)


def mix_to_world(proxies: SceneProxySet, pose: Pose) -> SceneProxySet:
    """Transform proxy coordinates into the world frame; features untouched."""
    if proxies.frame == "world":
        raise StateError("proxies already in world frame")
    coords = np.zeros_like(proxies.coords)
    m = proxies.valid
    coords[m] = proxies.coords[m] @ pose.r.T + pose.t
    coords = desentinelize(coords, m)
    return SceneProxySet(
        coords=coords, feats=proxies.feats, valid=proxies.valid,
        frame="world", view_index=proxies.view_index,
    )


@dataclass
class _CacheEntry:
    frame_index: int
    proxies: SceneProxySet
    points: PointCloud | None  # world-frame sampled points, kept for query FPS


class ProxyCache:
    """Per-stream store of already-extracted world-frame proxies.

    Entries are immutable once stored and must arrive with strictly
    increasing frame indices. Alongside each proxy set the world-frame point
    sample of the frame is retained so global object queries can be drawn
    from the concatenated scene without revisiting past frames.
    """

    def __init__(self):
        self._streams: dict[object, list[_CacheEntry]] = {}

    def put(self, stream, frame_index: int, proxies: SceneProxySet,
            points: PointCloud | None = None) -> None:
        if proxies.frame != "world":
            raise StateError("cache stores world-frame proxies only")
        entries = self._streams.setdefault(stream, [])
        if entries and frame_index <= entries[-1].frame_index:
            raise CacheOrderError(
                f"frame {frame_index} not after {entries[-1].frame_index} "
                f"in stream {stream!r}"
            )
        for arr in (proxies.coords, proxies.feats, proxies.valid):
            arr.setflags(write=False)
        entries.append(_CacheEntry(frame_index, proxies, points))

    def collect(self, stream, upto: int | None = None) -> list[SceneProxySet]:
        entries = self._entries(stream)
        if upto is None:
            return [e.proxies for e in entries]
        return [e.proxies for e in entries if e.frame_index <= upto]

    def collect_points(self, stream, upto: int | None = None) -> list[PointCloud]:
        entries = self._entries(stream)
        picked = entries if upto is None else [e for e in entries if e.frame_index <= upto]
        return [e.points for e in picked if e.points is not None]

    def length(self, stream) -> int:
        return len(self._entries(stream))

    def last_index(self, stream) -> int:
        entries = self._entries(stream)
        return entries[-1].frame_index if entries else -1

    def has_stream(self, stream) -> bool:
        return stream in self._streams

    def _entries(self, stream) -> list[_CacheEntry]:
        if stream not in self._streams:
            raise UnknownStreamError(f"unknown stream {stream!r}")
        return self._streams[stream]

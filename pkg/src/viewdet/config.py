"""Dataclass configuration tree with dotted-key overrides.

Every tunable declared across the pipeline lives here under one of the
top-level groups (model / augment / train / eval / data). A RunConfig can be
loaded from a JSON document, overridden with dotted key=value pairs, and
echoed back as ``config.resolved.json`` so any run is replayable.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .numerics import MlpSpec


@dataclass
class SaLayerConfig:
    radius: float
    centroid_count: int  # 0 = dynamic, chosen at call time
    max_group_size: int
    mlp: MlpSpec

    def __post_init__(self):
        if self.radius <= 0:
            raise ConfigError("SA radius must be positive")


@dataclass
class EncoderConfig:
    num_layers: int = 3
    radii: tuple[float, ...] = (0.8, 0.8, 1.2)
    model_dim: int = 256
    heads: int = 4
    ffn_dim: int = 128
    pe_mode: str = "mlp_fourier"  # none | fourier | mlp_fourier

    def __post_init__(self):
        if len(self.radii) != self.num_layers:
            raise ConfigError("encoder radii list must match num_layers")
        if self.model_dim % self.heads != 0:
            raise ConfigError("model_dim must be divisible by heads")
        if self.pe_mode not in ("none", "fourier", "mlp_fourier"):
            raise ConfigError(f"unknown pe_mode {self.pe_mode!r}")


@dataclass
class DecoderConfig:
    num_layers: int = 8
    num_queries: int = 256
    query_mode: str = "global"  # global | proxy
    model_dim: int = 256
    heads: int = 4
    ffn_dim: int = 128

    def __post_init__(self):
        if self.num_queries < 1:
            raise ConfigError("need at least one object query")
        if self.query_mode not in ("global", "proxy"):
            raise ConfigError(f"unknown query_mode {self.query_mode!r}")


def _default_sa1() -> SaLayerConfig:
    return SaLayerConfig(
        radius=0.2, centroid_count=256, max_group_size=64,
        mlp=MlpSpec([3, 64, 128, 256]),
    )


def _default_sa2() -> SaLayerConfig:
    # channels[0] = SA1 feature width + 3 relative coordinates
    return SaLayerConfig(
        radius=0.8, centroid_count=0, max_group_size=32,
        mlp=MlpSpec([259, 256, 256, 256]),
    )


@dataclass
class ModelConfig:
    sa1: SaLayerConfig = field(default_factory=_default_sa1)
    sa2: SaLayerConfig = field(default_factory=_default_sa2)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    num_classes: int = 18
    coord_mode: str = "camera"  # camera | world
    pe_bands: int = 16
    pe_max_freq: float = 64.0
    token_budget: int = 2000
    train_token_count: int = 40
    points_per_view: int = 5000
    score_threshold: float = 0.05
    nms_iou: float = 0.25
    max_views: int = 50

    def __post_init__(self):
        if self.coord_mode not in ("camera", "world"):
            raise ConfigError(f"unknown coord_mode {self.coord_mode!r}")
        c = self.sa2.mlp.channels
        if c[0] != self.sa1.mlp.channels[-1] + 3:
            raise ConfigError("sa2 input width must be sa1 output width + 3")
        if self.encoder.model_dim != c[-1]:
            raise ConfigError("encoder model_dim must equal sa2 output width")
        if self.decoder.model_dim != self.encoder.model_dim:
            raise ConfigError("decoder model_dim must equal encoder model_dim")

    @property
    def feature_dim(self) -> int:
        return self.sa2.mlp.channels[-1]

    @property
    def o_sa1(self) -> int:
        return self.sa1.centroid_count


@dataclass
class AugmentConfig:
    probability: float = 0.75
    max_drop_fraction: float = 0.5
    cuboid_ratio_range: tuple[float, float] = (0.3, 0.85)

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ConfigError("augment probability must lie in [0, 1]")
        if not 0.0 <= self.max_drop_fraction < 1.0:
            raise ConfigError("max_drop_fraction must lie in [0, 1)")


@dataclass
class TrainConfig:
    steps: int = 200
    lr: float = 5e-3
    momentum: float = 0.9
    clip_norm: float = 1.0
    lr_decay_at: tuple[float, ...] = (0.6, 0.85)  # fractions of total steps
    lr_decay_factor: float = 0.5
    weight_center: float = 1.0
    weight_size: float = 1.0
    weight_class: float = 1.0
    background_weight: float = 0.2
    init_seed: int = 0


@dataclass
class EvalConfig:
    iou_thresholds: tuple[float, ...] = (0.25, 0.5)
    fusion_nms_iou: float = 0.25


@dataclass
class DataConfig:
    width: int = 320
    height: int = 240
    room_size: tuple[float, float, float] = (6.0, 6.0, 3.0)
    object_count: tuple[int, int] = (2, 4)
    class_count: int = 18
    frame_count: int = 50
    trajectory: str = "orbit"  # orbit | walk


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)


# --- flattening / overrides -------------------------------------------------


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def config_to_dict(cfg) -> dict:
    return _to_plain(cfg)


def flatten_config(cfg) -> dict[str, object]:
    flat = {}

    def walk(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                walk(f"{prefix}.{k}" if prefix else k, v)
        else:
            flat[prefix] = value

    walk("", config_to_dict(cfg))
    return flat


def _coerce(text: str, reference):
    if isinstance(reference, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse boolean from {text!r}")
    if isinstance(reference, int):
        return int(text)
    if isinstance(reference, float):
        return float(text)
    if isinstance(reference, (list, tuple)):
        return json.loads(text)
    return text


def _set_nested(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def _get_nested(tree: dict, dotted: str):
    node = tree
    for p in dotted.split("."):
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[p]
    return node


def _build(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if dataclasses.is_dataclass(f.type) if isinstance(f.type, type) else False:
            kwargs[f.name] = _build(f.type, v)
        else:
            kwargs[f.name] = v
    return cls(**kwargs)


_NESTED = {
    "model": ModelConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "data": DataConfig,
}

_MODEL_NESTED = {"sa1": SaLayerConfig, "sa2": SaLayerConfig,
                 "encoder": EncoderConfig, "decoder": DecoderConfig}


def config_from_dict(data: dict) -> RunConfig:
    base = config_to_dict(RunConfig())
    _merge_checked(base, data, path="")
    return _instantiate(base)


def _merge_checked(base: dict, update: dict, path: str) -> None:
    for k, v in update.items():
        here = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {here!r} expects a mapping")
            _merge_checked(base[k], v, here)
        else:
            base[k] = v


def _instantiate(tree: dict) -> RunConfig:
    def make_sa(d):
        mlp = d["mlp"]
        return SaLayerConfig(
            radius=d["radius"], centroid_count=d["centroid_count"],
            max_group_size=d["max_group_size"],
            mlp=MlpSpec(list(mlp["channels"]), mlp["activation"], mlp["normalize"]),
        )

    m = tree["model"]
    model = ModelConfig(
        sa1=make_sa(m["sa1"]), sa2=make_sa(m["sa2"]),
        encoder=EncoderConfig(
            num_layers=m["encoder"]["num_layers"],
            radii=tuple(m["encoder"]["radii"]),
            model_dim=m["encoder"]["model_dim"], heads=m["encoder"]["heads"],
            ffn_dim=m["encoder"]["ffn_dim"], pe_mode=m["encoder"]["pe_mode"],
        ),
        decoder=DecoderConfig(
            num_layers=m["decoder"]["num_layers"],
            num_queries=m["decoder"]["num_queries"],
            query_mode=m["decoder"]["query_mode"],
            model_dim=m["decoder"]["model_dim"], heads=m["decoder"]["heads"],
            ffn_dim=m["decoder"]["ffn_dim"],
        ),
        num_classes=m["num_classes"], coord_mode=m["coord_mode"],
        pe_bands=m["pe_bands"], pe_max_freq=m["pe_max_freq"],
        token_budget=m["token_budget"], train_token_count=m["train_token_count"],
        points_per_view=m["points_per_view"], score_threshold=m["score_threshold"],
        nms_iou=m["nms_iou"], max_views=m["max_views"],
    )
    a = tree["augment"]
    augment = AugmentConfig(a["probability"], a["max_drop_fraction"],
                            tuple(a["cuboid_ratio_range"]))
    t = tree["train"]
    train = TrainConfig(
        steps=t["steps"], lr=t["lr"], momentum=t["momentum"],
        clip_norm=t["clip_norm"], lr_decay_at=tuple(t["lr_decay_at"]),
        lr_decay_factor=t["lr_decay_factor"], weight_center=t["weight_center"],
        weight_size=t["weight_size"], weight_class=t["weight_class"],
        background_weight=t["background_weight"], init_seed=t["init_seed"],
    )
    e = tree["eval"]
    ev = EvalConfig(tuple(e["iou_thresholds"]), e["fusion_nms_iou"])
    d = tree["data"]
    data = DataConfig(
        width=d["width"], height=d["height"], room_size=tuple(d["room_size"]),
        object_count=tuple(d["object_count"]), class_count=d["class_count"],
        frame_count=d["frame_count"], trajectory=d["trajectory"],
    )
    return RunConfig(model=model, augment=augment, train=train, eval=ev, data=data)


def load_run_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Load JSON config (or defaults) and apply dotted key=value overrides."""
    tree = config_to_dict(RunConfig())
    if path is not None:
        with open(path) as fh:
            _merge_checked(tree, json.load(fh), path="")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, text = item.split("=", 1)
        current = _get_nested(tree, key)
        if isinstance(current, dict):
            raise ConfigError(f"config key {key!r} is a group, not a value")
        _set_nested(tree, key, _coerce(text, current))
    return _instantiate(tree)


def write_resolved_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir) / "config.resolved.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def toy_model_config(
    feature_dim: int = 64,
    sa1_centroids: int = 64,
    token_count: int = 8,
    num_queries: int = 48,
    num_classes: int = 3,
    points_per_view: int = 320,
    enc_layers: int = 2,
    dec_layers: int = 3,
    pe_mode: str = "mlp_fourier",
    query_mode: str = "global",
    coord_mode: str = "camera",
) -> ModelConfig:
    """Small configuration for desk-scale training and tests."""
    c1 = feature_dim // 2
    sa1 = SaLayerConfig(radius=0.45, centroid_count=sa1_centroids, max_group_size=24,
                        mlp=MlpSpec([3, c1, feature_dim]))
    sa2 = SaLayerConfig(radius=1.4, centroid_count=0, max_group_size=12,
                        mlp=MlpSpec([feature_dim + 3, feature_dim, feature_dim]))
    enc = EncoderConfig(num_layers=enc_layers, radii=(2.0,) * enc_layers,
                        model_dim=feature_dim, heads=4, ffn_dim=feature_dim,
                        pe_mode=pe_mode)
    dec = DecoderConfig(num_layers=dec_layers, num_queries=num_queries,
                        query_mode=query_mode, model_dim=feature_dim, heads=4,
                        ffn_dim=feature_dim)
    return ModelConfig(
        sa1=sa1, sa2=sa2, encoder=enc, decoder=dec, num_classes=num_classes,
        coord_mode=coord_mode, pe_bands=8, pe_max_freq=16.0,
        token_budget=sa1_centroids * 4, train_token_count=token_count,
        points_per_view=points_per_view,
    )

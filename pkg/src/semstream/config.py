"""Line-oriented scenario files.

Sections in square brackets, `key = value` lines, `#` comments. Unknown
sections or keys are rejected with the file and line number, which is the
reason this is a purpose-built parser instead of a generic one. Dotted keys
set texture fields, e.g. `background.color_a = 0.2 0.2 0.3`.

Sections:
    [scene]            canvas, background, noise, seed
    [object:NAME]      one object stream (file order preserved)
    [drift:NAME]       one scheduled appearance change
    [pretrain:NAME]    a historical scene: [scene] keys plus frames/stride
    [train]            distillation hyperparameters
    [network]          link preset and overrides
    [pipeline]         batching, thresholds, run length, mode
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError
from .metrics import CONSTRAINED_NETWORK, RICH_NETWORK, NetworkConfig
from .pipeline import PipelineConfig
from .scene import DriftEvent, ObjectSpec, SceneConfig, TextureSpec
from .training import TrainConfig

_TEXTURE_KEYS = ("", ".color_a", ".color_b", ".scale", ".axis", ".seed_tag")

_SCENE_KEYS = {"L", "fps", "seed", "noise_amp"} | {
    "background" + suffix for suffix in _TEXTURE_KEYS}
_OBJECT_KEYS = {"size", "vx", "vy", "shape", "initial", "spawn_rate",
                "max_live"} | {"texture" + suffix for suffix in _TEXTURE_KEYS}
_DRIFT_KEYS = {"frame", "noise_amp"} | {
    "background" + suffix for suffix in _TEXTURE_KEYS} | {
    "object_texture" + suffix for suffix in _TEXTURE_KEYS}
_PRETRAIN_KEYS = _SCENE_KEYS | {"frames", "stride"}
_TRAIN_KEYS = {"learning_rate", "epochs", "minibatch", "seed",
               "negative_subsample_ratio", "verbatim_loss"}
_NETWORK_KEYS = {"preset", "bandwidth_bps", "latency_s", "server_s_per_frame",
                 "source_s_per_region"}
_PIPELINE_KEYS = {"n_frames", "th", "r", "delta", "alpha", "overlap_mode",
                  "iou_threshold", "drift_window", "update_epochs",
                  "update_lr", "enable_updates", "seed", "batches", "mode",
                  "r_uniform", "low_r", "profile_period", "f1_target",
                  "conv_channels"}

_NETWORK_PRESETS = {"constrained": CONSTRAINED_NETWORK, "rich": RICH_NETWORK}

RUN_MODES = ("ltc", "ltc-spatial", "ltc-temporal", "dds", "reducto",
             "uniform", "oracle")


@dataclass
class Scenario:
    """Everything a run needs, parsed and validated."""

    scene: SceneConfig
    pretrain_scenes: list
    train: TrainConfig
    network: NetworkConfig
    pipeline: PipelineConfig
    batches: int = 6
    mode: str = "ltc"
    th_auto: bool = False
    r_uniform: int = 2
    low_r: int | None = None
    profile_period: int = 5
    f1_target: float = 0.9
    conv_channels: tuple = (16, 32)
    path: str = "<memory>"


class _Section:
    def __init__(self, kind, name, line):
        self.kind = kind
        self.name = name
        self.line = line
        self.items = {}


def _tokenize(path, text):
    """Yield (line number, kind, payload) for section and key lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{path}:{lineno}: unterminated section header")
            yield lineno, "section", line[1:-1].strip()
        elif "=" in line:
            key, value = line.split("=", 1)
            yield lineno, "item", (key.strip(), value.strip())
        else:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")


def _collect_sections(path, text):
    sections = []
    current = None
    for lineno, kind, payload in _tokenize(path, text):
        if kind == "section":
            name, _, sub = payload.partition(":")
            current = _Section(name.strip(), sub.strip(), lineno)
            sections.append(current)
        else:
            if current is None:
                raise ConfigError(f"{path}:{lineno}: key outside any section")
            key, value = payload
            if key in current.items:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            current.items[key] = (value, lineno)
    return sections


def _fail(path, lineno, msg):
    raise ConfigError(f"{path}:{lineno}: {msg}")


def _parse_value(path, lineno, value, caster, what):
    try:
        return caster(value)
    except (ValueError, TypeError):
        _fail(path, lineno, f"bad {what}: {value!r}")


def _bool(value):
    low = value.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(value)


def _floats(value):
    parts = tuple(float(v) for v in value.split())
    if not parts:
        raise ValueError(value)
    return parts


def _color(value):
    parts = _floats(value)
    if len(parts) != 3:
        raise ValueError(value)
    return parts


def _pair(caster):
    def parse(value):
        parts = value.split()
        if len(parts) == 1:
            parts = parts * 2
        if len(parts) != 2:
            raise ValueError(value)
        return (caster(parts[0]), caster(parts[1]))
    return parse


def _ints(value):
    parts = tuple(int(v) for v in value.split())
    if not parts:
        raise ValueError(value)
    return parts


def _texture_from(path, section, prefix, base=None):
    """Build a TextureSpec from `prefix`-rooted keys; None if none present."""
    present = [k for k in section.items if k == prefix or
               k.startswith(prefix + ".")]
    if not present:
        return base
    tex = TextureSpec() if base is None else base
    fields = {"kind": tex.kind, "color_a": tex.color_a, "color_b": tex.color_b,
              "scale": tex.scale, "axis": tex.axis, "seed_tag": tex.seed_tag}
    for key in present:
        value, lineno = section.items[key]
        if key == prefix:
            fields["kind"] = value
        else:
            sub = key.split(".", 1)[1]
            if sub in ("color_a", "color_b"):
                fields[sub] = _parse_value(path, lineno, value, _color, "color")
            elif sub in ("scale", "axis", "seed_tag"):
                fields[sub] = _parse_value(path, lineno, value, int, sub)
            else:
                _fail(path, lineno, f"unknown texture field {sub!r}")
    tex = TextureSpec(**fields)
    try:
        tex.validate()
    except ValueError as exc:
        _fail(path, section.line, str(exc))
    return tex


def _check_keys(path, section, allowed):
    for key, (_, lineno) in section.items.items():
        if key not in allowed:
            _fail(path, lineno, f"unknown key {key!r} in [{section.kind}]")


def _get(section, key):
    return section.items.get(key, (None, section.line))


def _scene_from_section(path, section, base: SceneConfig, objects, drift):
    """Apply [scene]-style keys from `section` onto `base`."""
    updates = {}
    for key in ("L", "fps", "seed"):
        value, lineno = _get(section, key)
        if value is not None:
            updates[key] = _parse_value(path, lineno, value, int, key)
    value, lineno = _get(section, "noise_amp")
    if value is not None:
        updates["noise_amp"] = _parse_value(path, lineno, value, float, "noise_amp")
    background = _texture_from(path, section, "background", base.background)
    cfg = replace(base, background=background, objects=tuple(objects),
                  drift_schedule=tuple(drift), **updates)
    try:
        cfg.validate()
    except ValueError as exc:
        _fail(path, section.line, str(exc))
    return cfg


def _object_from_section(path, section, canvas):
    _check_keys(path, section, _OBJECT_KEYS)
    tex = _texture_from(path, section, "texture", TextureSpec())
    kwargs = {"texture": tex}
    value, lineno = _get(section, "size")
    if value is not None:
        kwargs["size_range"] = _parse_value(path, lineno, value, _pair(int), "size")
    for key, attr in (("vx", "vx_range"), ("vy", "vy_range")):
        value, lineno = _get(section, key)
        if value is not None:
            kwargs[attr] = _parse_value(path, lineno, value, _pair(float), key)
    value, lineno = _get(section, "shape")
    if value is not None:
        kwargs["shape"] = value
    for key in ("initial", "max_live"):
        value, lineno = _get(section, key)
        if value is not None:
            kwargs[key] = _parse_value(path, lineno, value, int, key)
    value, lineno = _get(section, "spawn_rate")
    if value is not None:
        kwargs["spawn_rate"] = _parse_value(path, lineno, value, float, "spawn_rate")
    spec = ObjectSpec(**kwargs)
    try:
        spec.validate(canvas)
    except ValueError as exc:
        _fail(path, section.line, str(exc))
    return spec


def _drift_from_section(path, section):
    _check_keys(path, section, _DRIFT_KEYS)
    value, lineno = _get(section, "frame")
    if value is None:
        _fail(path, section.line, "drift section needs a frame index")
    frame = _parse_value(path, lineno, value, int, "frame")
    background = _texture_from(path, section, "background")
    object_texture = _texture_from(path, section, "object_texture")
    noise_amp = None
    value, lineno = _get(section, "noise_amp")
    if value is not None:
        noise_amp = _parse_value(path, lineno, value, float, "noise_amp")
    return DriftEvent(frame=frame, background=background,
                      object_texture=object_texture, noise_amp=noise_amp)


def parse_scenario(text, path="<memory>") -> Scenario:
    """Parse scenario text; raise ConfigError with line context on problems."""
    sections = _collect_sections(path, text)
    scene_sec = None
    object_secs, drift_secs, pretrain_secs = [], [], []
    train_sec = network_sec = pipeline_sec = None
    for sec in sections:
        if sec.kind == "scene":
            if scene_sec is not None:
                _fail(path, sec.line, "duplicate [scene] section")
            scene_sec = sec
        elif sec.kind == "object":
            object_secs.append(sec)
        elif sec.kind == "drift":
            drift_secs.append(sec)
        elif sec.kind == "pretrain":
            pretrain_secs.append(sec)
        elif sec.kind == "train":
            train_sec = sec
        elif sec.kind == "network":
            network_sec = sec
        elif sec.kind == "pipeline":
            pipeline_sec = sec
        else:
            _fail(path, sec.line, f"unknown section [{sec.kind}]")
    if scene_sec is None:
        raise ConfigError(f"{path}: missing [scene] section")
    _check_keys(path, scene_sec, _SCENE_KEYS)

    # Canvas size must be known before object specs can be validated.
    value, lineno = _get(scene_sec, "L")
    L = _parse_value(path, lineno, value, int, "L") if value is not None else 16
    canvas = 28 * L
    objects = [_object_from_section(path, sec, canvas) for sec in object_secs]
    drift = sorted((_drift_from_section(path, sec) for sec in drift_secs),
                   key=lambda e: e.frame)
    scene = _scene_from_section(path, scene_sec, SceneConfig(), objects, drift)

    pretrain_scenes = []
    for sec in pretrain_secs:
        _check_keys(path, sec, _PRETRAIN_KEYS)
        frames_v, lineno = _get(sec, "frames")
        frames = _parse_value(path, lineno, frames_v, int, "frames") \
            if frames_v is not None else 10
        stride_v, lineno = _get(sec, "stride")
        stride = _parse_value(path, lineno, stride_v, int, "stride") \
            if stride_v is not None else 3
        # Historical scenes: same object streams, no drift schedule.
        cfg = _scene_from_section(path, sec, scene, scene.objects, ())
        pretrain_scenes.append((cfg, frames, stride))

    train = TrainConfig()
    if train_sec is not None:
        _check_keys(path, train_sec, _TRAIN_KEYS)
        kwargs = {}
        casters = {"learning_rate": float, "epochs": int, "minibatch": int,
                   "seed": int, "negative_subsample_ratio": float,
                   "verbatim_loss": _bool}
        for key, caster in casters.items():
            value, lineno = _get(train_sec, key)
            if value is not None:
                kwargs[key] = _parse_value(path, lineno, value, caster, key)
        train = TrainConfig(**kwargs)
        try:
            train.validate()
        except ValueError as exc:
            _fail(path, train_sec.line, str(exc))

    network = CONSTRAINED_NETWORK
    if network_sec is not None:
        _check_keys(path, network_sec, _NETWORK_KEYS)
        value, lineno = _get(network_sec, "preset")
        if value is not None:
            if value not in _NETWORK_PRESETS:
                _fail(path, lineno, f"unknown network preset {value!r}")
            network = _NETWORK_PRESETS[value]
        kwargs = {}
        for key in ("bandwidth_bps", "latency_s", "server_s_per_frame",
                    "source_s_per_region"):
            value, lineno = _get(network_sec, key)
            if value is not None:
                kwargs[key] = _parse_value(path, lineno, value, float, key)
        network = replace(network, **kwargs)
        try:
            network.validate()
        except ValueError as exc:
            _fail(path, network_sec.line, str(exc))

    pipeline = PipelineConfig(n_frames=scene.fps)
    batches, mode, th_auto = 6, "ltc", False
    r_uniform, low_r, profile_period, f1_target = 2, None, 5, 0.9
    conv_channels = (16, 32)
    if pipeline_sec is not None:
        _check_keys(path, pipeline_sec, _PIPELINE_KEYS)
        kwargs = {}
        casters = {"n_frames": int, "r": int, "delta": float, "alpha": float,
                   "overlap_mode": str, "iou_threshold": float,
                   "drift_window": int, "update_epochs": int,
                   "update_lr": float, "enable_updates": _bool, "seed": int}
        for key, caster in casters.items():
            value, lineno = _get(pipeline_sec, key)
            if value is not None:
                kwargs[key] = _parse_value(path, lineno, value, caster, key)
        value, lineno = _get(pipeline_sec, "th")
        if value is not None:
            if value == "auto":
                th_auto = True
            else:
                kwargs["th"] = _parse_value(path, lineno, value, float, "th")
        pipeline = replace(pipeline, **kwargs)
        try:
            pipeline.validate()
        except ValueError as exc:
            _fail(path, pipeline_sec.line, str(exc))
        value, lineno = _get(pipeline_sec, "batches")
        if value is not None:
            batches = _parse_value(path, lineno, value, int, "batches")
        value, lineno = _get(pipeline_sec, "mode")
        if value is not None:
            if value not in RUN_MODES:
                _fail(path, lineno, f"unknown mode {value!r}")
            mode = value
        value, lineno = _get(pipeline_sec, "r_uniform")
        if value is not None:
            r_uniform = _parse_value(path, lineno, value, int, "r_uniform")
        value, lineno = _get(pipeline_sec, "low_r")
        if value is not None:
            low_r = _parse_value(path, lineno, value, int, "low_r")
        value, lineno = _get(pipeline_sec, "profile_period")
        if value is not None:
            profile_period = _parse_value(path, lineno, value, int,
                                          "profile_period")
        value, lineno = _get(pipeline_sec, "f1_target")
        if value is not None:
            f1_target = _parse_value(path, lineno, value, float, "f1_target")
        value, lineno = _get(pipeline_sec, "conv_channels")
        if value is not None:
            conv_channels = _parse_value(path, lineno, value, _ints,
                                         "conv_channels")

    return Scenario(scene=scene, pretrain_scenes=pretrain_scenes, train=train,
                    network=network, pipeline=pipeline, batches=batches,
                    mode=mode, th_auto=th_auto, r_uniform=r_uniform,
                    low_r=low_r, profile_period=profile_period,
                    f1_target=f1_target, conv_channels=conv_channels,
                    path=path)


def load_scenario(path) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_scenario(text, path=path)

"""
Configuration service module.

This module loads run configurations from TOML. A file names its active
preset; presets may inherit from each other and are deep-merged, command
line overrides are applied last, and the merged tree is turned into a
validated RunConfig. Every problem is reported as a ConfigError naming the
dotted path of the offending field.
"""

import json
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from app.api.error_handling import ConfigError
from app.models.control import PaddleLayout
from app.models.detection import ConfidenceStats, ConfusionModel
from app.models.geometry import BeltCalibration
from app.models.material import MATERIAL_CLASSES, MaterialClass
from app.models.run_config import (
    ActuationNoise, FeederConfig, LogPaths, RunConfig, SimConfig, WireEndpoint
)

# Configure logging
logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parents[2] / 'config'
DEFAULT_RUN_CONFIG = CONFIG_DIR / 'default.toml'
PUBLISHED_CONFUSION = CONFIG_DIR / 'confusion_published.toml'


def read_toml(path, what='config'):
    """
    Read a TOML file.

    Raises:
        ConfigError: If the file is missing or not valid TOML
    """
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(what, f"file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(what, f"{path} is not valid TOML: {e}")


def deep_merge(base, override):
    """Merge ``override`` into a copy of ``base``; nested tables merge key by key."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_preset(document, name=None):
    """
    Flatten a preset and its ancestors into one tree.

    Args:
        document (dict): Parsed config file
        name (str, optional): Preset to resolve; defaults to the file's ``preset``

    Returns:
        tuple: (preset name, merged tree)
    """
    presets = document.get('presets')
    if not isinstance(presets, dict) or not presets:
        # A file without presets is a single tree
        tree = {k: v for k, v in document.items() if k != 'preset'}
        return name or document.get('preset', 'custom'), tree

    name = name or document.get('preset')
    if not name:
        raise ConfigError('preset', "no preset selected")

    chain = []
    current = name
    while current is not None:
        if current in chain:
            raise ConfigError(f"presets.{current}.inherits", f"inheritance cycle {chain + [current]}")
        if current not in presets:
            field = 'preset' if not chain else f"presets.{chain[-1]}.inherits"
            raise ConfigError(field, f"unknown preset {current!r}")
        chain.append(current)
        current = presets[current].get('inherits')

    tree = {}
    for preset_name in reversed(chain):
        layer = {k: v for k, v in presets[preset_name].items() if k != 'inherits'}
        tree = deep_merge(tree, layer)
    return name, tree


def parse_override(text):
    """
    Parse a ``dotted.key=value`` override; the value is read as a TOML value
    and falls back to a plain string.
    """
    key, sep, raw = text.partition('=')
    key = key.strip()
    if not sep or not key:
        raise ConfigError('override', f"expected key=value, got {text!r}")
    try:
        value = tomllib.loads(f"value = {raw.strip()}")['value']
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key, value


def apply_overrides(tree, overrides):
    """Return a copy of ``tree`` with dotted-key overrides applied."""
    result = deep_merge(tree, {})
    for dotted, value in overrides.items():
        node = result
        parts = dotted.split('.')
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
            else:
                child = dict(child)
            node[part] = child
            node = child
        node[parts[-1]] = value
    return result


class _Section:
    """Typed access to one table of the tree, with dotted error paths."""

    def __init__(self, table, path, known=None):
        if not isinstance(table, dict):
            raise ConfigError(path, "must be a table")
        self.table = table
        self.path = path
        if known is not None:
            for key in table:
                if key not in known:
                    raise ConfigError(self.field(key), "unknown setting")

    def field(self, key):
        return f"{self.path}.{key}" if self.path else key

    def sub(self, key, known=None):
        return _Section(self.table.get(key, {}), self.field(key), known)

    def number(self, key, default, integer=False):
        value = self.table.get(key, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(self.field(key), f"expected a number, got {value!r}")
        if integer:
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(self.field(key), f"expected an integer, got {value!r}")
            return int(value)
        return float(value)

    def text(self, key, default):
        value = self.table.get(key, default)
        if value is not None and not isinstance(value, str):
            raise ConfigError(self.field(key), f"expected a string, got {value!r}")
        return value

    def material(self, key, default):
        value = self.table.get(key, default)
        try:
            return MaterialClass.parse(value)
        except ValueError as e:
            raise ConfigError(self.field(key), str(e))

    def per_class(self, key, default, cast):
        """A table keyed by material class name."""
        section = self.sub(key)
        values = dict(default)
        for name, value in section.table.items():
            try:
                cls = MaterialClass.parse(name)
            except ValueError:
                raise ConfigError(section.field(name), "unknown material class")
            try:
                values[cls] = cast(value)
            except (TypeError, ValueError):
                raise ConfigError(section.field(name), f"invalid value {value!r}")
        return values


def _pair(value):
    low, high = value
    return (float(low), float(high))


def _stats(section, key, default):
    table = section.sub(key, {'mean', 'std'})
    return ConfidenceStats(
        table.number('mean', default.mean),
        table.number('std', default.std)
    )


def _rows(section, base=None):
    rows = [list(row) for row in base] if base is not None else [None] * len(MATERIAL_CLASSES)
    for name, value in section.table.items():
        try:
            cls = MaterialClass.parse(name)
        except ValueError:
            raise ConfigError(section.field(name), "unknown material class")
        if not isinstance(value, list) or len(value) != len(MATERIAL_CLASSES) + 1:
            raise ConfigError(section.field(name), "expected 4 probabilities (3 classes + miss)")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError(section.field(name), "probabilities must be numbers")
        rows[cls.index] = [float(v) for v in value]
    for cls, row in zip(MATERIAL_CLASSES, rows):
        if row is None:
            raise ConfigError(section.field(cls.value), "missing confusion row")
    return rows


def load_confusion(path, row_overrides=None, prefix='detector.confusion'):
    """
    Load a confusion model file.

    Args:
        path (str|Path): TOML file with ``rows``, ``jitter``, ``confidence``
            and ``false_positives`` tables
        row_overrides (dict, optional): Replacement rows keyed by class name

    Returns:
        ConfusionModel: Validated model
    """
    document = read_toml(path, 'detector.confusion_file')
    root = _Section(document, prefix, {'name', 'rows', 'jitter', 'confidence', 'false_positives'})
    rows = _rows(root.sub('rows'))
    if row_overrides:
        rows = _rows(_Section(row_overrides, 'detector.rows'), rows)

    jitter = root.sub('jitter', {'center_px', 'size_frac'})
    confidence = root.sub('confidence', {'correct', 'confused', 'false_positive'})
    false_positives = root.sub('false_positives', {'rate_per_frame'})
    defaults = ConfusionModel(rows=rows)
    model = ConfusionModel(
        rows=rows,
        center_jitter_px=jitter.number('center_px', defaults.center_jitter_px),
        size_jitter_frac=jitter.number('size_frac', defaults.size_jitter_frac),
        confidence_correct=_stats(confidence, 'correct', defaults.confidence_correct),
        confidence_confused=_stats(confidence, 'confused', defaults.confidence_confused),
        confidence_false_positive=_stats(
            confidence, 'false_positive', defaults.confidence_false_positive
        ),
        false_positive_rate=false_positives.number('rate_per_frame', defaults.false_positive_rate),
        name=root.text('name', Path(path).stem) if not row_overrides else 'custom'
    )
    return model.validate(prefix)


def published_confusion_model():
    """The bundled confusion model solved from the published test statistics."""
    return load_confusion(PUBLISHED_CONFUSION)


def _calibration(section):
    c = section.sub('calibration', {
        'belt_width_px', 'belt_width_in', 'segment_count', 'segment_width_px',
        'segment_height_px', 'net_input_px', 'belt_speed_mps', 'fov_to_edge_mm', 'px_per_mm'
    })
    d = BeltCalibration()
    return BeltCalibration(
        belt_width_px=c.number('belt_width_px', d.belt_width_px, integer=True),
        belt_width_in=c.number('belt_width_in', d.belt_width_in),
        segment_count=c.number('segment_count', d.segment_count, integer=True),
        segment_width_px=c.number('segment_width_px', d.segment_width_px, integer=True),
        segment_height_px=c.number('segment_height_px', d.segment_height_px, integer=True),
        net_input_px=c.number('net_input_px', d.net_input_px, integer=True),
        belt_speed_mps=c.number('belt_speed_mps', d.belt_speed_mps),
        fov_to_edge_mm=c.number('fov_to_edge_mm', d.fov_to_edge_mm),
        px_per_mm_override=c.number('px_per_mm', None)
    ).validate()


def _layout(section, belt_width_mm):
    c = section.sub('layout', {
        'paddle_count', 'pitch_mm', 'actuate_ms', 'return_ms',
        'standoff_from_belt_edge_mm', 'drop_below_belt_mm', 't_to_hit_ms'
    })
    d = PaddleLayout()
    return PaddleLayout(
        paddle_count=c.number('paddle_count', d.paddle_count, integer=True),
        pitch_mm=c.number('pitch_mm', d.pitch_mm),
        actuate_ms=c.number('actuate_ms', d.actuate_ms),
        return_ms=c.number('return_ms', d.return_ms),
        standoff_from_belt_edge_mm=c.number('standoff_from_belt_edge_mm', d.standoff_from_belt_edge_mm),
        drop_below_belt_mm=c.number('drop_below_belt_mm', d.drop_below_belt_mm),
        t_to_hit_ms=c.number('t_to_hit_ms', None)
    ).validate(belt_width_mm)


def _feeder(section):
    c = section.sub('feeder', {'mass_rate_kg_s', 'class_mix', 'mass_g', 'size_mm', 'min_gap_mm', 'max_attempts'})
    d = FeederConfig()
    return FeederConfig(
        mass_rate_kg_s=c.number('mass_rate_kg_s', d.mass_rate_kg_s),
        class_mix=c.per_class('class_mix', d.class_mix, float),
        mass_g=c.per_class('mass_g', d.mass_g, float),
        size_mm=c.per_class('size_mm', d.size_mm, _pair),
        min_gap_mm=c.number('min_gap_mm', d.min_gap_mm),
        max_attempts=c.number('max_attempts', d.max_attempts, integer=True)
    )


def _sim(section, detector):
    c = section.sub('sim', {
        'seed', 'particle_count', 'duration_ms', 'target', 'ton_ms', 't_offset_ms',
        'fov_start_mm', 'inference_latency_ms', 'wire_transit_ms', 'tick_ms', 'feeder', 'noise'
    })
    d = SimConfig()
    noise = c.sub('noise', {'timing_std_ms', 'stray_prob'})
    return SimConfig(
        seed=c.number('seed', d.seed, integer=True),
        particle_count=c.number('particle_count', d.particle_count, integer=True),
        duration_ms=c.number('duration_ms', d.duration_ms),
        target=c.material('target', d.target.value),
        detector=detector.text('kind', d.detector),
        conf_thresh=detector.number('conf_thresh', d.conf_thresh),
        nms_iou=detector.number('nms_iou', d.nms_iou),
        ton_ms=c.number('ton_ms', d.ton_ms),
        t_offset_ms=c.number('t_offset_ms', d.t_offset_ms),
        fov_start_mm=c.number('fov_start_mm', d.fov_start_mm),
        inference_latency_ms=c.number('inference_latency_ms', d.inference_latency_ms),
        wire_transit_ms=c.number('wire_transit_ms', d.wire_transit_ms),
        tick_ms=c.number('tick_ms', d.tick_ms),
        feeder=_feeder(c),
        noise=ActuationNoise(
            timing_std_ms=noise.number('timing_std_ms', 0.0),
            stray_prob=noise.number('stray_prob', 0.0)
        )
    )


def build_run_config(tree, preset='custom', base_dir=None, source_path=None):
    """
    Turn a merged configuration tree into a validated RunConfig.

    Args:
        tree (dict): Merged tree (calibration, layout, detector, sim, wire, logs)
        preset (str): Name recorded in the report
        base_dir (Path, optional): Directory relative file references resolve against

    Returns:
        RunConfig: Validated configuration
    """
    root = _Section(tree, '', {'calibration', 'layout', 'detector', 'sim', 'wire', 'logs'})
    base_dir = Path(base_dir) if base_dir is not None else CONFIG_DIR

    calibration = _calibration(root)
    layout = _layout(root, calibration.belt_width_mm)

    detector = root.sub('detector', {'kind', 'confusion_file', 'conf_thresh', 'nms_iou', 'rows'})
    confusion_file = detector.text('confusion_file', None)
    if confusion_file is None:
        confusion_path = PUBLISHED_CONFUSION
    else:
        confusion_path = Path(confusion_file)
        if not confusion_path.is_absolute():
            confusion_path = base_dir / confusion_path
        if not confusion_path.exists():
            raise ConfigError('detector.confusion_file', f"file not found: {confusion_path}")
    confusion = load_confusion(confusion_path, detector.table.get('rows'))

    wire = root.sub('wire', {'host', 'port'})
    wire_defaults = WireEndpoint()
    logs = root.sub('logs', {'directory', 'operations', 'report', 'summary', 'particles'})
    log_defaults = LogPaths()
    log_dir = os.environ.get('ARIS_LOG_DIR') or logs.text('directory', log_defaults.directory)

    config = RunConfig(
        preset=preset,
        calibration=calibration,
        layout=layout,
        confusion=confusion,
        sim=_sim(root, detector),
        wire=WireEndpoint(
            host=wire.text('host', wire_defaults.host),
            port=wire.number('port', wire_defaults.port, integer=True)
        ),
        logs=LogPaths(
            directory=log_dir,
            operations=logs.text('operations', log_defaults.operations),
            report=logs.text('report', log_defaults.report),
            summary=logs.text('summary', log_defaults.summary),
            particles=logs.text('particles', log_defaults.particles)
        ),
        confusion_file=str(confusion_path),
        source_path=str(source_path) if source_path else None,
        snapshot=json.dumps(tree, sort_keys=True, separators=(',', ':'))
    )
    return config.validate()


def load_run_config(path=None, preset=None, overrides=None):
    """
    Load, merge and validate a run configuration.

    Args:
        path (str|Path, optional): Config file; defaults to ``ARIS_RUN_CONFIG``
            or the bundled default
        preset (str, optional): Preset to use instead of the file's own
        overrides (dict, optional): Dotted keys applied after preset merging

    Returns:
        RunConfig: Validated configuration

    Raises:
        ConfigError: Naming the offending field
    """
    path = Path(path or os.environ.get('ARIS_RUN_CONFIG') or DEFAULT_RUN_CONFIG)
    document = read_toml(path)
    name, tree = resolve_preset(document, preset)
    if overrides:
        tree = apply_overrides(tree, overrides)
    try:
        config = build_run_config(tree, name, path.parent, path)
    except ConfigError as e:
        logger.error(f"Invalid run configuration {path}: {e}")
        raise
    logger.info(f"Loaded run configuration {path} (preset {name})")
    return config

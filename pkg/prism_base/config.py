"""
Run configuration

A run is described by one strict JSON document with six sections. Every key
is required, unknown keys are rejected and each error names the dotted path
of the offending key. Defaults (used to write fresh configs) come from
app_settings.
"""
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace

from django.utils.translation import gettext_lazy as _

from .app_settings import ABLATION_VARIANTS, EMBEDDING_DIM, EMBEDDING_MIN_DIM, EMBEDDING_SALT, \
    EMBEDDING_SOURCE, EVAL_HITS_K, EVAL_POOL_SIZE, EVAL_RETRIEVAL_SOURCE, EVAL_SETTINGS, LAMBDA_MARGIN, \
    LAMBDA_RECON, LAMBDA_STEP, MARGIN, MODEL_D, MODEL_D_TIME, MODEL_ENC_LAYERS, MODEL_HEADS, MODEL_K, \
    MODEL_L, MODEL_POOLING, SPLIT_RATIOS, TRAIN_BATCH_SIZE, TRAIN_EPOCHS, TRAIN_EVAL_EVERY, TRAIN_LR, \
    TRAIN_PATIENCE, TRAIN_SEED
from .exceptions import ConfigurationError

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'configs')
DEFAULT_CONFIG_PATH = os.path.join(CONFIG_DIR, 'default.json')
SMOKE_CONFIG_PATH = os.path.join(CONFIG_DIR, 'smoke.json')

UNIVERSES = ('all_destinations', 'train_destinations')
EMBEDDING_SOURCES = ('hash', 'table')
POOLINGS = ('masked_mean',)
RETRIEVAL_SOURCES = ('shared', 'paired')


def _fail(path, problem):
    raise ConfigurationError(_('%(path)s: %(problem)s'), code='config', params={'path': path, 'problem': problem})


@dataclass(frozen=True)
class DataConfig:
    ratios: tuple = SPLIT_RATIOS
    universe: str = 'all_destinations'

    def validate(self, path):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios) or abs(sum(self.ratios) - 1.0) > 1e-9:
            _fail(path + '.ratios', 'must be three non-negative numbers summing to 1')
        if self.universe not in UNIVERSES:
            _fail(path + '.universe', 'must be one of %s' % (UNIVERSES,))


@dataclass(frozen=True)
class EmbeddingConfig:
    source: str = EMBEDDING_SOURCE
    dim: int = EMBEDDING_DIM
    salt: int = EMBEDDING_SALT
    node_table: str = ''                # EMB1 files, table source only
    edge_table: str = ''

    def validate(self, path):
        if self.source not in EMBEDDING_SOURCES:
            _fail(path + '.source', 'must be one of %s' % (EMBEDDING_SOURCES,))
        if self.source == 'hash' and self.dim < EMBEDDING_MIN_DIM:
            _fail(path + '.dim', 'must be >= %d' % EMBEDDING_MIN_DIM)
        if self.source == 'table' and not (self.node_table and self.edge_table):
            _fail(path + '.node_table', 'table source needs node_table and edge_table paths')


@dataclass(frozen=True)
class PrismConfig:
    d: int = MODEL_D
    d_time: int = MODEL_D_TIME
    L: int = MODEL_L
    K: int = MODEL_K
    heads: int = MODEL_HEADS
    enc_layers: int = MODEL_ENC_LAYERS
    use_semantic: bool = True
    use_behavior: bool = True
    pooling: str = MODEL_POOLING

    def validate(self, path):
        for name in ('d', 'd_time', 'L', 'K', 'heads', 'enc_layers'):
            if getattr(self, name) < 1:
                _fail('%s.%s' % (path, name), 'must be >= 1')
        if self.d % self.heads:
            _fail(path + '.heads', 'must divide d=%d' % self.d)
        if self.pooling not in POOLINGS:
            _fail(path + '.pooling', 'must be one of %s' % (POOLINGS,))


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda_recon: float = LAMBDA_RECON
    lambda_margin: float = LAMBDA_MARGIN
    lambda_step: float = LAMBDA_STEP
    margin: float = MARGIN

    def validate(self, path):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value) or value < 0:
                _fail('%s.%s' % (path, f.name), 'must be finite and >= 0')


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = TRAIN_EPOCHS
    batch_size: int = TRAIN_BATCH_SIZE
    lr: float = TRAIN_LR
    seed: int = TRAIN_SEED
    early_stop_patience: int = TRAIN_PATIENCE
    eval_every: int = TRAIN_EVAL_EVERY
    ablation: str = 'full'

    def validate(self, path):
        for name in ('batch_size', 'early_stop_patience', 'eval_every'):
            if getattr(self, name) < 1:
                _fail('%s.%s' % (path, name), 'must be >= 1')
        if self.epochs < 0:
            _fail(path + '.epochs', 'must be >= 0')
        if not math.isfinite(self.lr) or self.lr < 0:
            _fail(path + '.lr', 'must be finite and >= 0')
        try:
            parse_variant(self.ablation)
        except ConfigurationError:
            _fail(path + '.ablation', 'unknown ablation variant %r' % self.ablation)


@dataclass(frozen=True)
class EvalConfig:
    C: int = EVAL_POOL_SIZE
    K_list: tuple = EVAL_HITS_K
    settings: tuple = EVAL_SETTINGS
    retrieval_source: str = EVAL_RETRIEVAL_SOURCE

    def validate(self, path):
        if self.C < 1:
            _fail(path + '.C', 'must be >= 1')
        if not self.K_list or any(not isinstance(k, int) or k < 1 for k in self.K_list):
            _fail(path + '.K_list', 'must be a non-empty list of positive integers')
        if not self.settings or any(s not in EVAL_SETTINGS for s in self.settings):
            _fail(path + '.settings', 'must be a non-empty subset of %s' % (EVAL_SETTINGS,))
        if self.retrieval_source not in RETRIEVAL_SOURCES:
            _fail(path + '.retrieval_source', 'must be one of %s' % (RETRIEVAL_SOURCES,))


SECTIONS = (
    ('data', DataConfig),
    ('embedding', EmbeddingConfig),
    ('model', PrismConfig),
    ('objectives', ObjectiveWeights),
    ('train', TrainConfig),
    ('eval', EvalConfig),
)


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = DataConfig()
    embedding: EmbeddingConfig = EmbeddingConfig()
    model: PrismConfig = PrismConfig()
    objectives: ObjectiveWeights = ObjectiveWeights()
    train: TrainConfig = TrainConfig()
    eval: EvalConfig = EvalConfig()

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            _fail('<root>', 'config must be a JSON object')
        _reject_unknown('', doc, [section for section, _cls in SECTIONS])
        sections = {}
        for name, section_cls in SECTIONS:
            if name not in doc:
                _fail(name, 'missing section')
            sections[name] = _build_section(name, section_cls, doc[name])
        return cls(**sections)

    def resolved(self):
        """ Config with the train.ablation variant folded in """
        return apply_ablation(self, self.train.ablation)


def _reject_unknown(path, doc, allowed):
    for key in doc:
        if key not in allowed:
            _fail((path + '.' if path else '') + key, 'unknown key')


def _coerce(path, value, default):
    """ Type check against the default's type (bool, int, float, str or sequence) """
    if isinstance(default, bool):
        if not isinstance(value, bool):
            _fail(path, 'expected true/false')
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            _fail(path, 'expected an integer')
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(path, 'expected a number')
        value = float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            _fail(path, 'expected a string')
    elif isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            _fail(path, 'expected a list')
        value = tuple(value)
    return value


def _build_section(name, section_cls, doc):
    if not isinstance(doc, dict):
        _fail(name, 'expected an object')
    section_fields = fields(section_cls)
    _reject_unknown(name, doc, [f.name for f in section_fields])
    values = {}
    for f in section_fields:
        path = '%s.%s' % (name, f.name)
        if f.name not in doc:
            _fail(path, 'missing key')
        values[f.name] = _coerce(path, doc[f.name], f.default)
    section = section_cls(**values)
    section.validate(name)
    return section


def default_run_config():
    return RunConfig()


def parse_override(text):
    """ 'model.K=3' -> (['model', 'K'], 3); values are JSON literals or bare strings """
    if '=' not in text:
        _fail(text, 'override must look like section.key=value')
    path, raw = text.split('=', 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return path.strip().split('.'), value


def apply_overrides(doc, overrides):
    for text in overrides or ():
        keys, value = parse_override(text)
        target = doc
        for depth, key in enumerate(keys[:-1]):
            if not isinstance(target.get(key), dict):
                _fail('.'.join(keys[:depth + 1]), 'unknown key')
            target = target[key]
        if keys[-1] not in target:
            _fail('.'.join(keys), 'unknown key')
        target[keys[-1]] = value
    return doc


def load_run_config(path, overrides=None):
    try:
        with open(path, encoding='utf-8') as handle:
            doc = json.load(handle)
    except ValueError as exc:
        raise ConfigurationError(_('%(path)s is not valid JSON: %(error)s'), code='config_json',
                                 params={'path': path, 'error': exc})
    return RunConfig.from_dict(apply_overrides(doc, overrides))


""" -----------------------------------------------------------------------
                                ABLATIONS
    ------------------------------------------------------------------- """


def parse_variant(variant):
    """ 'steps=3' -> ('steps', 3); named variants -> (name, None) """
    if variant in ABLATION_VARIANTS:
        return variant, None
    if variant.startswith('steps='):
        try:
            steps = int(variant.split('=', 1)[1])
        except ValueError:
            steps = 0
        if steps >= 1:
            return 'steps', steps
    raise ConfigurationError(_('unknown ablation variant %(variant)s'), code='ablation',
                             params={'variant': variant})


def apply_ablation(config, variant):
    """ Every ablation is a config delta; the variant name is echoed in train.ablation """
    name, steps = parse_variant(variant)
    model, objectives = config.model, config.objectives
    if name == 'wo_semantic':
        model = replace(model, use_semantic=False)
    elif name == 'wo_behavior':
        model = replace(model, use_behavior=False)
    elif name == 'wo_recon':
        objectives = replace(objectives, lambda_recon=0.0)
    elif name == 'wo_margin':
        objectives = replace(objectives, lambda_margin=0.0)
    elif name == 'wo_step':
        objectives = replace(objectives, lambda_step=0.0)
    elif name == 'steps':
        model = replace(model, K=steps)
    return replace(config, model=model, objectives=objectives, train=replace(config.train, ablation=variant))

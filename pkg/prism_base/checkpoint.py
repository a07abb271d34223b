"""
Checkpoint files

    PCK1
    config {"d": 64, ...}
    emb_dim 64
    tensor node_proj.w1 64,64
    ...
    end
    <float64 little-endian tensor data in header order>

The header is plain text so a checkpoint can be inspected with head(1);
tensor data is stored at full precision for a bit-exact round trip.
"""
import json
import logging
from dataclasses import asdict

import numpy as np
from django.utils.translation import gettext_lazy as _

from .app_settings import APP_NAME, CHECKPOINT_MAGIC
from .autodiff.tensor import Tensor
from .config import PrismConfig
from .exceptions import CheckpointMismatchError
from .prism_model import PrismParams

logger = logging.getLogger('%s.checkpoint' % APP_NAME)

_END = b'end'
_DTYPE = np.dtype('<f8')


def save_checkpoint(path, params, extra=None):
    """ ``extra``: optional flat dict of JSON values echoed as header lines """
    lines = [CHECKPOINT_MAGIC,
             b'config ' + json.dumps(asdict(params.config), sort_keys=True).encode('utf-8'),
             b'emb_dim %d' % params.emb_dim]
    for key, value in sorted((extra or {}).items()):
        lines.append(('meta %s %s' % (key, json.dumps(value, sort_keys=True))).encode('utf-8'))
    for name, tensor in params.items():
        lines.append(('tensor %s %s' % (name, ','.join(str(n) for n in tensor.shape))).encode('utf-8'))
    lines.append(_END)
    with open(path, 'wb') as handle:
        handle.write(b'\n'.join(lines) + b'\n')
        for tensor in params.values():
            handle.write(np.ascontiguousarray(tensor.values, dtype=_DTYPE).tobytes())
    logger.debug('wrote checkpoint %s (%d parameters)', path, params.count())


def _mismatch(message, **params):
    return CheckpointMismatchError(message, code='checkpoint', params=params)


def read_checkpoint_header(blob, path):
    """ -> (config dict, emb_dim, meta dict, [(name, shape)], data offset) """
    if not blob.startswith(CHECKPOINT_MAGIC + b'\n'):
        raise _mismatch(_('%(path)s is not a PCK1 checkpoint'), path=path)
    offset = len(CHECKPOINT_MAGIC) + 1
    config, emb_dim, meta, tensors = None, None, {}, []
    while True:
        stop = blob.find(b'\n', offset)
        if stop < 0:
            raise _mismatch(_('%(path)s: header is not terminated'), path=path)
        line = blob[offset:stop].decode('utf-8', errors='replace')
        offset = stop + 1
        key, _sep, value = line.partition(' ')
        if key == _END.decode('ascii'):
            break
        if key == 'config':
            config = json.loads(value)
        elif key == 'emb_dim':
            emb_dim = int(value)
        elif key == 'meta':
            meta_key, _sep, meta_value = value.partition(' ')
            meta[meta_key] = json.loads(meta_value)
        elif key == 'tensor':
            name, _sep, shape = value.partition(' ')
            tensors.append((name, tuple(int(n) for n in shape.split(',') if n)))
    if config is None or emb_dim is None:
        raise _mismatch(_('%(path)s: header lacks config or emb_dim'), path=path)
    return config, emb_dim, meta, tensors, offset


def load_checkpoint(path, config=None, emb_dim=None):
    """
    Restores PrismParams; when ``config``/``emb_dim`` are given every tensor
    must match the shape they imply, otherwise the echoed config is used.
    """
    with open(path, 'rb') as handle:
        blob = handle.read()
    stored_config, stored_dim, _meta, stored, offset = read_checkpoint_header(blob, path)
    if config is None:
        config = PrismConfig(**stored_config)
    emb_dim = stored_dim if emb_dim is None else emb_dim

    expected = PrismParams.shapes(config, emb_dim)
    if [name for name, _shape in stored] != [name for name, _shape in expected]:
        missing = sorted(set(n for n, _s in expected) - set(n for n, _s in stored))
        extra = sorted(set(n for n, _s in stored) - set(n for n, _s in expected))
        raise _mismatch(_('%(path)s: parameter blocks differ (missing %(missing)s, unexpected %(extra)s)'),
                        path=path, missing=missing, extra=extra)
    for (name, got), (_name, want) in zip(stored, expected):
        if tuple(got) != tuple(want):
            raise _mismatch(_('%(path)s: block %(name)s has shape %(got)s, config needs %(want)s'),
                            path=path, name=name, got=got, want=want)

    total = sum(int(np.prod(shape)) for _name, shape in expected)
    if len(blob) - offset != total * _DTYPE.itemsize:
        raise _mismatch(_('%(path)s: expected %(want)s data bytes, found %(got)s'),
                        path=path, want=total * _DTYPE.itemsize, got=len(blob) - offset)
    data = np.frombuffer(blob, dtype=_DTYPE, offset=offset)
    tensors, cursor = {}, 0
    for name, shape in expected:
        size = int(np.prod(shape))
        values = data[cursor:cursor + size].astype(np.float64).reshape(shape)
        tensors[name] = Tensor(values, requires_grad=True, name=name)
        cursor += size
    logger.debug('loaded checkpoint %s', path)
    return PrismParams(config, emb_dim, tensors)

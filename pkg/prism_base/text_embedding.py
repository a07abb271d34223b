"""
Text embedding sources

Model code never sees raw text: node and edge texts are turned into dense
matrices here, either from a precomputed EMB1 table or by a salted hashing
embedder. Both sources are pure functions of (text, config).
"""
import logging
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from django.utils.translation import gettext_lazy as _
from sklearn.feature_extraction.text import HashingVectorizer

from .app_settings import APP_NAME, EMBEDDING_MAGIC, EMBEDDING_MIN_DIM
from .exceptions import ConfigurationError, CoverageError, EmbeddingFormatError

logger = logging.getLogger('%s.embedding' % APP_NAME)

_HEADER = struct.Struct('<QQ')
_ROW_DTYPE = np.dtype('<f4')


class EmbeddingTable(object):
    """ rows[i] is the vector of contiguous id i """

    def __init__(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise EmbeddingFormatError(_('embedding rows must be 2-D, got shape %(shape)s'),
                                       code='table_shape', params={'shape': rows.shape})
        bad = np.flatnonzero(~np.isfinite(rows).all(axis=1))
        if bad.size:
            raise EmbeddingFormatError(_('non-finite embedding value in row %(row)s'),
                                       code='table_non_finite', params={'row': int(bad[0])})
        self.rows = rows

    @property
    def dim(self):
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]

    def __getitem__(self, index):
        return self.rows[index]


def write_embedding_table(path, rows):
    """ EMB1 magic, <QQ (rows, dim), then float32 little-endian row-major data """
    rows = np.asarray(rows, dtype=np.float64)
    with open(path, 'wb') as handle:
        handle.write(EMBEDDING_MAGIC)
        handle.write(_HEADER.pack(rows.shape[0], rows.shape[1]))
        handle.write(rows.astype(_ROW_DTYPE).tobytes(order='C'))


def load_embedding_table(path):
    with open(path, 'rb') as handle:
        blob = handle.read()
    start = len(EMBEDDING_MAGIC) + _HEADER.size
    if len(blob) < start or blob[:len(EMBEDDING_MAGIC)] != EMBEDDING_MAGIC:
        raise EmbeddingFormatError(_('%(path)s is not an EMB1 embedding table'),
                                   code='table_magic', params={'path': path})
    count, dim = _HEADER.unpack_from(blob, len(EMBEDDING_MAGIC))
    expected = start + count * dim * _ROW_DTYPE.itemsize
    if len(blob) != expected:
        raise EmbeddingFormatError(_('%(path)s holds %(got)s bytes, header %(rows)sx%(dim)s needs %(want)s'),
                                   code='table_truncated',
                                   params={'path': path, 'got': len(blob), 'rows': count, 'dim': dim,
                                           'want': expected})
    if count * dim == 0:
        return EmbeddingTable(np.zeros((count, dim)))
    rows = np.frombuffer(blob, dtype=_ROW_DTYPE, offset=start).astype(np.float64).reshape(count, dim)
    logger.debug('loaded %d x %d embedding table from %s', count, dim, path)
    return EmbeddingTable(rows)


""" -----------------------------------------------------------------------
                             HASHING EMBEDDER
    ------------------------------------------------------------------- """


@dataclass(frozen=True)
class HashingEmbedderConfig:
    dim: int
    salt: int = 0
    token_pattern: str = 'whitespace'

    def __post_init__(self):
        if self.dim < EMBEDDING_MIN_DIM:
            raise ConfigurationError(_('hashing embedder dim must be >= %(min)s, got %(dim)s'),
                                     code='embedding_dim', params={'min': EMBEDDING_MIN_DIM, 'dim': self.dim})


@lru_cache(maxsize=8)
def _vectorizer(cfg):
    prefix = '%d\x1f' % cfg.salt

    def analyzer(text):
        return [prefix + token for token in text.split()]

    # Signed feature hashing; alternate_sign gives each token its (index, sign)
    return HashingVectorizer(n_features=cfg.dim, analyzer=analyzer, alternate_sign=True,
                             norm='l2', dtype=np.float64)


def hash_embed_many(cfg, texts):
    """ One L2-normalized row per text; empty texts give zero rows """
    texts = list(texts)
    if not texts:
        return np.zeros((0, cfg.dim))
    return _vectorizer(cfg).transform(texts).toarray()


def hash_embed(cfg, text):
    return hash_embed_many(cfg, [text])[0]


""" -----------------------------------------------------------------------
                                 SOURCES
    ------------------------------------------------------------------- """


@dataclass(frozen=True)
class TableSource:
    node_table: EmbeddingTable
    edge_table: EmbeddingTable

    @classmethod
    def from_files(cls, node_path, edge_path):
        return cls(load_embedding_table(node_path), load_embedding_table(edge_path))


def _table_rows(table, count, kind):
    if len(table) < count:
        missing = list(range(len(table), count))
        raise CoverageError(_('%(kind)s embedding table misses ids %(ids)s'), code='coverage',
                            params={'kind': kind, 'ids': missing})
    return table.rows[:count].copy()


def embed_all(ds, source):
    """ (node_matrix [V x dim], edge_matrix [R x dim]) aligned to contiguous ids """
    if isinstance(source, HashingEmbedderConfig):
        nodes = hash_embed_many(source, ds.node_texts)
        edges = hash_embed_many(source, ds.edge_texts)
    elif isinstance(source, TableSource):
        if source.node_table.dim != source.edge_table.dim:
            raise EmbeddingFormatError(_('node table dim %(node)s differs from edge table dim %(edge)s'),
                                       code='table_dims',
                                       params={'node': source.node_table.dim, 'edge': source.edge_table.dim})
        nodes = _table_rows(source.node_table, ds.num_nodes, 'node')
        edges = _table_rows(source.edge_table, len(ds.edge_texts), 'edge')
    else:
        raise ConfigurationError(_('unknown embedding source %(source)r'), code='embedding_source',
                                 params={'source': source})
    logger.info('embedded %d node texts and %d edge texts (dim %d)', nodes.shape[0], edges.shape[0],
                nodes.shape[1])
    return nodes, edges


def build_embedding_source(embedding_config):
    """ EmbeddingConfig section of a run config -> source object """
    if embedding_config.source == 'table':
        return TableSource.from_files(embedding_config.node_table, embedding_config.edge_table)
    return HashingEmbedderConfig(dim=embedding_config.dim, salt=embedding_config.salt)

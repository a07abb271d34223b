"""
Dynamic text-attributed graphs: loading, generation, splitting and indexing

Node and edge-text ids read from files are mapped to contiguous integers in
the order the text files list them; ``node_keys``/``edge_keys`` keep the
original spellings so a dataset can be written back unchanged.
"""
import json
import logging
import math
import os
from collections import deque
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .app_settings import APP_NAME, DATA_EDGE_TEXTS_FILE, DATA_EVENTS_FILE, DATA_MANIFEST_FILE, \
    DATA_NODE_TEXTS_FILE, DTGB_DST_COLUMNS, DTGB_EDGE_COLUMNS, DTGB_EDGE_FILE, DTGB_ID_COLUMNS, \
    DTGB_NODE_FILE, DTGB_RELATION_FILE, DTGB_SRC_COLUMNS, DTGB_TIME_COLUMNS, EDGE_TEXTS_HEADER, \
    EVENTS_HEADER, MIN_SPLIT_EVENTS, NODE_TEXTS_HEADER, PAD_TOKEN, SPLIT_RATIOS, SYNTH_COMMUNITIES, \
    SYNTH_EVENTS, SYNTH_FILLER, SYNTH_NODES, SYNTH_RECENCY_BIAS, SYNTH_RECENT_WINDOW
from .autodiff.rng import Rng
from .exceptions import ConfigurationError, DatasetFormatError, ReferentialIntegrityError, \
    SamplingError

logger = logging.getLogger('%s.dytag_data' % APP_NAME)


@dataclass(frozen=True)
class InteractionEvent:
    src: int
    dst: int
    edge_text_id: int
    timestamp: float


@dataclass(frozen=True)
class CandidatePool:
    """ Retrieval pool: the true destination plus C-1 distinct negatives """
    query: tuple            # (src, timestamp, true_dst)
    candidates: tuple


class DyTagDataset(object):
    """ Chronological interactions with node and edge texts (columnar) """

    def __init__(self, src, dst, edge_ids, timestamps, node_texts, edge_texts,
                 node_keys=None, edge_keys=None):
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.edge_ids = np.asarray(edge_ids, dtype=np.int64)
        self.timestamps = np.asarray(timestamps, dtype=np.float64)
        self.node_texts = list(node_texts)
        self.edge_texts = list(edge_texts)
        self.node_keys = list(node_keys) if node_keys is not None else [str(i) for i in range(len(node_texts))]
        self.edge_keys = list(edge_keys) if edge_keys is not None else [str(i) for i in range(len(edge_texts))]
        self.communities = None             # Latent communities, synthetic data only

    @property
    def num_nodes(self):
        return len(self.node_texts)

    @property
    def num_events(self):
        return int(self.src.size)

    def __len__(self):
        return self.num_events

    def event(self, index):
        return InteractionEvent(int(self.src[index]), int(self.dst[index]),
                                int(self.edge_ids[index]), float(self.timestamps[index]))

    @property
    def events(self):
        return [self.event(i) for i in range(self.num_events)]

    def destination_universe(self):
        """ Every node that is a destination somewhere in the dataset """
        return np.unique(self.dst)

    def prefix(self, stop):
        """ Dataset restricted to the first ``stop`` events (texts kept whole) """
        return DyTagDataset(self.src[:stop], self.dst[:stop], self.edge_ids[:stop], self.timestamps[:stop],
                            self.node_texts, self.edge_texts, self.node_keys, self.edge_keys)


""" -----------------------------------------------------------------------
                                  FILES
    ------------------------------------------------------------------- """


def _line(row):
    return int(row) + 2


def _read_frame(path, header=None):
    """ String-typed frame with stripped column names; data row i sits on file line i + 2 """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, index_col=False, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise DatasetFormatError('%(path)s line 1: expected header %(want)s, got %(got)s', code='bad_header',
                                 params={'path': path, 'want': ','.join(header or ()), 'got': None})
    except pd.errors.ParserError as exc:
        raise DatasetFormatError('%(path)s: %(reason)s', code='bad_row', params={'path': path, 'reason': exc})
    frame.columns = [str(col).strip() for col in frame.columns]
    if header is None:
        return frame
    if tuple(frame.columns) != header:
        raise DatasetFormatError('%(path)s line 1: expected header %(want)s, got %(got)s', code='bad_header',
                                 params={'path': path, 'want': ','.join(header), 'got': ','.join(frame.columns)})
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        raise DatasetFormatError('%(path)s line %(line)s: expected %(want)s fields',
                                 code='bad_row',
                                 params={'path': path, 'line': _line(np.flatnonzero(short)[0]), 'want': len(header)})
    return frame


def _read_texts(path, header):
    frame = _read_frame(path, header)
    keys = frame[header[0]].str.strip()
    duplicated = keys.duplicated().to_numpy()
    if duplicated.any():
        row = np.flatnonzero(duplicated)[0]
        raise DatasetFormatError('%(path)s line %(line)s: duplicate id %(key)s',
                                 code='duplicate_id', params={'path': path, 'line': _line(row), 'key': keys.iloc[row]})
    keys = keys.tolist()
    return keys, frame[header[1]].tolist(), {key: i for i, key in enumerate(keys)}


def _parse_timestamps(column, path):
    """ Float seconds; the first unparsable, non-finite or negative value names its line """
    raw = column.str.strip()
    times = pd.to_numeric(raw, errors='coerce').to_numpy(dtype=np.float64)
    unparsable = np.flatnonzero(np.isnan(times) & (raw.str.lower() != 'nan').to_numpy())
    if unparsable.size:
        row = unparsable[0]
        raise DatasetFormatError('%(path)s line %(line)s: timestamp %(value)r is not a number',
                                 code='bad_timestamp', params={'path': path, 'line': _line(row), 'value': raw.iloc[row]})
    invalid = np.flatnonzero(~np.isfinite(times) | (times < 0))
    if invalid.size:
        raise DatasetFormatError('%(path)s line %(line)s: timestamp must be finite and non-negative',
                                 code='bad_timestamp', params={'path': path, 'line': _line(invalid[0])})
    return times


def load_dataset(events_path, node_texts_path, edge_texts_path):
    """ Reads and validates the three CSV files of a dataset """
    node_keys, node_texts, node_index = _read_texts(node_texts_path, NODE_TEXTS_HEADER)
    edge_keys, edge_texts, edge_index = _read_texts(edge_texts_path, EDGE_TEXTS_HEADER)

    events = _read_frame(events_path, EVENTS_HEADER)
    times = _parse_timestamps(events['timestamp'], events_path)
    raw_src, raw_dst, raw_edge = (events[col].str.strip() for col in EVENTS_HEADER[:3])
    missing_nodes = set(pd.concat([raw_src, raw_dst])) - set(node_index)
    missing_edges = set(raw_edge) - set(edge_index)
    if missing_nodes or missing_edges:
        raise ReferentialIntegrityError(
            'events reference unknown ids: nodes %(nodes)s, edge texts %(edges)s',
            code='unknown_ids', params={'nodes': sorted(missing_nodes), 'edges': sorted(missing_edges)})

    src = raw_src.map(node_index).to_numpy(dtype=np.int64)
    dst = raw_dst.map(node_index).to_numpy(dtype=np.int64)
    edges = raw_edge.map(edge_index).to_numpy(dtype=np.int64)
    order = np.argsort(times, kind='stable')
    if np.any(np.diff(times) < 0):
        logger.warning('%s is not sorted by timestamp; re-sorting %d events stably', events_path, times.size)
    return DyTagDataset(src[order], dst[order], edges[order], times[order],
                        node_texts, edge_texts, node_keys, edge_keys)


def load_dataset_dir(data_dir):
    return load_dataset(os.path.join(data_dir, DATA_EVENTS_FILE),
                        os.path.join(data_dir, DATA_NODE_TEXTS_FILE),
                        os.path.join(data_dir, DATA_EDGE_TEXTS_FILE))


def _write_frame(path, columns):
    pd.DataFrame(columns, dtype=object).to_csv(path, index=False, lineterminator='\n', encoding='utf-8')


def save_dataset(ds, out_dir, manifest_extra=None):
    """ Writes events/node/edge CSVs (LF endings) plus manifest.json """
    os.makedirs(out_dir, exist_ok=True)
    node_keys = np.asarray(ds.node_keys, dtype=object)
    edge_keys = np.asarray(ds.edge_keys, dtype=object)
    _write_frame(os.path.join(out_dir, DATA_EVENTS_FILE), {
        'src': node_keys[ds.src], 'dst': node_keys[ds.dst], 'edge_text_id': edge_keys[ds.edge_ids],
        'timestamp': [repr(float(ts)) for ts in ds.timestamps]})
    _write_frame(os.path.join(out_dir, DATA_NODE_TEXTS_FILE), dict(zip(NODE_TEXTS_HEADER, (ds.node_keys, ds.node_texts))))
    _write_frame(os.path.join(out_dir, DATA_EDGE_TEXTS_FILE), dict(zip(EDGE_TEXTS_HEADER, (ds.edge_keys, ds.edge_texts))))

    manifest = {'num_events': ds.num_events, 'num_nodes': ds.num_nodes, 'num_edge_texts': len(ds.edge_texts)}
    manifest.update(manifest_extra or {})
    with open(os.path.join(out_dir, DATA_MANIFEST_FILE), 'w', encoding='utf-8') as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write('\n')
    return manifest


def _pick_column(columns, aliases, path):
    for alias in aliases:
        if alias in columns:
            return alias
    raise DatasetFormatError('%(path)s: none of the columns %(aliases)s found in %(header)s',
                             code='dtgb_column', params={'path': path, 'aliases': aliases, 'header': list(columns)})


def _read_dtgb_texts(path):
    frame = _read_frame(path)
    id_col, text_col = _pick_column(frame.columns, DTGB_ID_COLUMNS, path), _pick_column(frame.columns, ('text',), path)
    keys = frame[id_col].str.strip().tolist()
    return keys, frame[text_col].tolist()


def convert_dtgb(src_dir, out_dir):
    """
    Maps a DTGB dataset directory onto the three-file layout

        edge_list.csv      u,i,r,ts (extra columns ignored)  -> events.csv
        entity_text.csv    i,text                            -> node_texts.csv
        relation_text.csv  i,text                            -> edge_texts.csv
    """
    edge_path = os.path.join(src_dir, DTGB_EDGE_FILE)
    node_keys, node_texts = _read_dtgb_texts(os.path.join(src_dir, DTGB_NODE_FILE))
    edge_keys, edge_texts = _read_dtgb_texts(os.path.join(src_dir, DTGB_RELATION_FILE))
    node_index = {key: i for i, key in enumerate(node_keys)}
    edge_index = {key: i for i, key in enumerate(edge_keys)}

    frame = _read_frame(edge_path)
    columns = [_pick_column(frame.columns, aliases, edge_path)
               for aliases in (DTGB_SRC_COLUMNS, DTGB_DST_COLUMNS, DTGB_EDGE_COLUMNS, DTGB_TIME_COLUMNS)]
    raw_src, raw_dst, raw_edge = (frame[col].str.strip() for col in columns[:3])
    src, dst, edges = raw_src.map(node_index), raw_dst.map(node_index), raw_edge.map(edge_index)
    unknown = np.flatnonzero((src.isna() | dst.isna() | edges.isna()).to_numpy())
    if unknown.size:
        raise ReferentialIntegrityError('%(path)s line %(line)s references an unknown id',
                                        code='unknown_ids', params={'path': edge_path, 'line': _line(unknown[0])})
    times = _parse_timestamps(frame[columns[3]], edge_path)

    order = np.argsort(times, kind='stable')
    ds = DyTagDataset(src.to_numpy(dtype=np.int64)[order], dst.to_numpy(dtype=np.int64)[order],
                      edges.to_numpy(dtype=np.int64)[order], times[order],
                      node_texts, edge_texts, node_keys, edge_keys)
    return save_dataset(ds, out_dir, {'source': 'dtgb'})


""" -----------------------------------------------------------------------
                                SYNTHETIC
    ------------------------------------------------------------------- """


@dataclass(frozen=True)
class SyntheticConfig:
    num_nodes: int = SYNTH_NODES
    num_events: int = SYNTH_EVENTS
    num_communities: int = SYNTH_COMMUNITIES
    recency_bias: float = SYNTH_RECENCY_BIAS
    seed: int = 0
    recent_window: int = SYNTH_RECENT_WINDOW


def synthetic_node_text(node, community):
    return 'topic_%d topic_%d user_%d %s topic_%d' % (community, community, node, SYNTH_FILLER, community)


def generate_synthetic(cfg):
    """
    Community-structured interaction stream with a tunable recency habit

    Each event draws a source uniformly; with probability recency_bias it
    repeats one of the source's ``recent_window`` latest partners, otherwise
    it picks another member of the source's community.
    """
    if cfg.num_communities < 1 or cfg.num_nodes < 2 * cfg.num_communities:
        raise ConfigurationError('need num_nodes >= 2 * num_communities (got %(nodes)s nodes, %(k)s communities)',
                                 code='synthetic_infeasible',
                                 params={'nodes': cfg.num_nodes, 'k': cfg.num_communities})
    if cfg.num_events < 1 or not 0.0 <= cfg.recency_bias <= 1.0 or cfg.recent_window < 1:
        raise ConfigurationError('need num_events >= 1, recency_bias in [0, 1] and recent_window >= 1',
                                 code='synthetic_infeasible')

    rng = Rng(cfg.seed).substream('data')
    community = np.empty(cfg.num_nodes, dtype=np.int64)
    community[rng.permutation(cfg.num_nodes)] = np.arange(cfg.num_nodes) % cfg.num_communities
    members = [np.flatnonzero(community == k) for k in range(cfg.num_communities)]
    recent = [deque(maxlen=cfg.recent_window) for _ in range(cfg.num_nodes)]

    src = np.empty(cfg.num_events, dtype=np.int64)
    dst = np.empty(cfg.num_events, dtype=np.int64)
    edges = np.empty(cfg.num_events, dtype=np.int64)
    times = np.empty(cfg.num_events, dtype=np.float64)
    clock = 0.0
    for i in range(cfg.num_events):
        u = int(rng.integers(cfg.num_nodes))
        if recent[u] and rng.random() < cfg.recency_bias:
            v = recent[u][int(rng.integers(len(recent[u])))]
        else:
            mates = members[community[u]]
            mates = mates[mates != u]
            v = int(mates[rng.integers(mates.size)])
        clock += float(rng.exponential(1.0)) + 1e-3
        src[i], dst[i], times[i] = u, v, clock
        edges[i] = community[u] * cfg.num_communities + community[v]
        recent[u].append(v)
        recent[v].append(u)

    node_texts = [synthetic_node_text(node, community[node]) for node in range(cfg.num_nodes)]
    edge_texts = ['link topic_%d topic_%d' % (a, b)
                  for a in range(cfg.num_communities) for b in range(cfg.num_communities)]
    ds = DyTagDataset(src, dst, edges, times, node_texts, edge_texts)
    ds.communities = community
    return ds


def synthetic_manifest(cfg):
    return {'generator': 'synthetic', 'config': asdict(cfg)}


""" -----------------------------------------------------------------------
                                 SPLITS
    ------------------------------------------------------------------- """


@dataclass(frozen=True)
class DatasetSplits:
    train: range
    val: range
    test: range
    inductive_nodes: frozenset

    def get(self, name):
        return {'train': self.train, 'val': self.val, 'test': self.test}[name]


def chronological_split(ds, ratios=SPLIT_RATIOS):
    """ First floor(0.7N) events train, next floor(0.15N) validate, the rest test """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError('split ratios must be three non-negative numbers summing to 1, got %(r)s',
                                 code='split_ratios', params={'r': tuple(ratios)})
    total = ds.num_events
    if total < MIN_SPLIT_EVENTS:
        raise ConfigurationError('refusing a degenerate split of %(n)s events (need >= %(min)s)',
                                 code='split_degenerate', params={'n': total, 'min': MIN_SPLIT_EVENTS})
    n_train = int(math.floor(ratios[0] * total + 1e-9))
    n_val = int(math.floor(ratios[1] * total + 1e-9))
    seen = set(ds.src[:n_train].tolist()) | set(ds.dst[:n_train].tolist())
    inductive = frozenset(node for node in range(ds.num_nodes) if node not in seen)
    return DatasetSplits(range(0, n_train), range(n_train, n_train + n_val),
                         range(n_train + n_val, total), inductive)


""" -----------------------------------------------------------------------
                                 HISTORY
    ------------------------------------------------------------------- """


class HistoryIndex(object):
    """
    Per-node chronological interaction lists in CSR layout
        - every event is filed under both endpoints, partner = other endpoint
        - ties keep event order
    """

    def __init__(self, num_nodes, offsets, partners, edges, times):
        self.num_nodes = num_nodes
        self.offsets = offsets
        self.partners = partners
        self.edges = edges
        self.times = times

    @classmethod
    def build(cls, ds, stop=None):
        """ Index over events [0, stop) """
        stop = ds.num_events if stop is None else stop
        order_ids = np.arange(stop)
        owners = np.concatenate([ds.src[:stop], ds.dst[:stop]])
        partners = np.concatenate([ds.dst[:stop], ds.src[:stop]])
        edges = np.concatenate([ds.edge_ids[:stop], ds.edge_ids[:stop]])
        times = np.concatenate([ds.timestamps[:stop], ds.timestamps[:stop]])
        sequence = np.concatenate([order_ids, order_ids])
        side = np.concatenate([np.zeros(stop, dtype=np.int64), np.ones(stop, dtype=np.int64)])
        order = np.lexsort((side, sequence, times, owners))
        counts = np.bincount(owners, minlength=ds.num_nodes)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(ds.num_nodes, offsets, partners[order], edges[order], times[order])

    def node_slice(self, node):
        return slice(self.offsets[node], self.offsets[node + 1])

    def window(self, node, t, L):
        """ Positions of the most recent <= L interactions strictly before t """
        span = self.node_slice(node)
        cut = span.start + int(np.searchsorted(self.times[span], t, side='left'))
        return max(span.start, cut - L), cut

    def batch(self, nodes, times, L):
        """
        Left-padded history arrays for many (node, t) queries
            returns partners, edges, event_times (int/int/float, [n x L], -1 / 0.0 padding) and mask [n x L]
        """
        n = len(nodes)
        partners = np.full((n, L), -1, dtype=np.int64)
        edges = np.full((n, L), -1, dtype=np.int64)
        event_times = np.zeros((n, L), dtype=np.float64)
        mask = np.zeros((n, L), dtype=np.float64)
        for row, (node, t) in enumerate(zip(nodes, times)):
            start, stop = self.window(int(node), float(t), L)
            width = stop - start
            if width:
                partners[row, L - width:] = self.partners[start:stop]
                edges[row, L - width:] = self.edges[start:stop]
                event_times[row, L - width:] = self.times[start:stop]
                mask[row, L - width:] = 1.0
        return partners, edges, event_times, mask


def extract_history(idx, u, t, L):
    """ (tokens, mask): u's last <= L interactions before t, oldest first, left-padded """
    if L < 1:
        raise ConfigurationError('history length must be >= 1', code='history_length')
    partners, edges, event_times, mask = idx.batch([u], [t], L)
    tokens = [(int(p), int(e), float(ts)) if m else PAD_TOKEN
              for p, e, ts, m in zip(partners[0], edges[0], event_times[0], mask[0])]
    return tokens, [int(m) for m in mask[0]]


""" -----------------------------------------------------------------------
                                SAMPLING
    ------------------------------------------------------------------- """


def sample_negatives(rng, true_dsts, universe):
    """ One uniform draw from ``universe`` minus each true destination (universe taken as a set) """
    universe = np.unique(np.asarray(universe, dtype=np.int64))
    true_dsts = np.asarray(true_dsts, dtype=np.int64)
    if universe.size == 0:
        raise SamplingError('no negative destination left to sample', code='empty_universe')
    position = np.searchsorted(universe, true_dsts)
    present = (position < universe.size) & (universe[np.minimum(position, universe.size - 1)] == true_dsts)
    if universe.size == 1 and present.any():
        raise SamplingError('no negative destination left to sample', code='empty_universe')
    draws = rng.integers(0, universe.size - present.astype(np.int64))
    # Skip over the true destination's slot
    draws = draws + (present & (draws >= position))
    return universe[draws]


def sample_negative(rng, positive, universe):
    return int(sample_negatives(rng, [positive.dst], universe)[0])


def build_candidate_pool(rng, query, C, universe):
    """ True destination plus C-1 distinct uniform negatives, shuffled """
    src, timestamp, true_dst = query
    universe = np.unique(np.asarray(universe, dtype=np.int64))
    others = universe[universe != true_dst]
    if C < 1 or others.size + 1 < C:
        raise ConfigurationError('candidate pool of %(c)s needs a universe of at least that size (have %(u)s)',
                                 code='pool_size', params={'c': C, 'u': int(others.size + 1)})
    negatives = rng.choice(others, size=C - 1, replace=False) if C > 1 else np.empty(0, dtype=np.int64)
    pool = rng.permutation(np.concatenate([[true_dst], negatives]).astype(np.int64))
    return CandidatePool((int(src), float(timestamp), int(true_dst)), tuple(int(node) for node in pool))

"""
PRISM forward computation

    semantic prior  s = FFN_node(text embedding)
    behavior tokens h_i = FFN_tok([s_partner || e || cos(w * dt + b)])
    joint encoder   [B_u ; B_v] = Encoder([H_u ; H_v]),  b = masked mean of B
    refinement      z0 = s;  z(k+1) = z(k) + FFN_v_k([z(k) || s || b || c(k)]) / K
                    c(k) = Attn(W_q_k [z(k) || s], B_u)
    decoder         y = sigmoid(MLP([z_u || z_v]))

All parameters live in one flat PrismParams mapping; every function here is
pure given (params, inputs) so concurrent forwards on shared params are safe.
"""
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from .app_settings import APP_NAME
from .autodiff import ops
from .autodiff.nn import check_heads, ffn, multi_head_attention, transformer_encoder_layer
from .autodiff.tensor import Tensor, as_tensor
from .exceptions import CausalityError, DimensionError

logger = logging.getLogger('%s.model' % APP_NAME)


""" -----------------------------------------------------------------------
                               PARAMETERS
    ------------------------------------------------------------------- """


def expected_param_count(config, emb_dim):
    """ Closed-form size of PrismParams for (config, embedding dim) """
    d, dt, e = config.d, config.d_time, emb_dim
    text_proj = 2 * (e * d + d * d + 2 * d)
    time_enc = 2 * dt
    token_proj = (2 * d + dt) * d + d * d + 2 * d
    encoder = config.enc_layers * (6 * d * d + 10 * d) + 2 * d
    steps = config.K * (10 * d * d + 3 * d)
    decoder = 4 * d * d + 4 * d + 1
    recon = 2 * d * d + 2 * d
    return text_proj + time_enc + token_proj + encoder + steps + decoder + recon


def _parameter_shapes(config, emb_dim):
    """ Ordered (name, shape, init) for every block; init in {xavier, zeros, ones, frequencies} """
    d, dt = config.d, config.d_time
    shapes = []

    def ffn_block(prefix, fan_in, hidden, fan_out, zero_output=False):
        shapes.extend([
            (prefix + '.w1', (fan_in, hidden), 'xavier'),
            (prefix + '.b1', (hidden,), 'zeros'),
            (prefix + '.w2', (hidden, fan_out), 'zeros' if zero_output else 'xavier'),
            (prefix + '.b2', (fan_out,), 'zeros'),
        ])

    def layer_norm(prefix):
        shapes.extend([(prefix + '.gamma', (d,), 'ones'), (prefix + '.beta', (d,), 'zeros')])

    ffn_block('node_proj', emb_dim, d, d)
    ffn_block('edge_proj', emb_dim, d, d)
    shapes.extend([('time_enc.omega', (dt,), 'frequencies'), ('time_enc.phase', (dt,), 'zeros')])
    ffn_block('token_proj', 2 * d + dt, d, d)

    for layer in range(config.enc_layers):
        prefix = 'encoder.%d' % layer
        layer_norm(prefix + '.ln1')
        for proj in ('q', 'k', 'v', 'o'):
            shapes.append(('%s.attn.w_%s' % (prefix, proj), (d, d), 'xavier'))
            shapes.append(('%s.attn.b_%s' % (prefix, proj), (d,), 'zeros'))
        layer_norm(prefix + '.ln2')
        ffn_block(prefix + '.ffn', d, d, d)
    layer_norm('encoder.final_ln')

    for k in range(config.K):
        prefix = 'step.%d' % k
        shapes.extend([
            (prefix + '.w_q', (2 * d, d), 'xavier'),
            (prefix + '.b_q', (d,), 'zeros'),
            (prefix + '.w_k', (d, d), 'xavier'),
            (prefix + '.w_v', (d, d), 'xavier'),
            (prefix + '.w_o', (d, d), 'xavier'),
        ])
        ffn_block(prefix + '.velocity', 4 * d, d, d, zero_output=True)

    ffn_block('decoder', 2 * d, 2 * d, 1, zero_output=True)
    ffn_block('recon', d, d, d)
    return shapes


def _initial_values(shape, init, rng):
    if init == 'zeros':
        return np.zeros(shape)
    if init == 'ones':
        return np.ones(shape)
    if init == 'frequencies':
        width = shape[0]
        return 1.0 / 10.0 ** (2.0 * np.arange(width) / width)
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


class PrismParams(object):
    """ Flat name -> Tensor mapping; per-step blocks are separate tensors """

    def __init__(self, config, emb_dim, tensors):
        self.config = config
        self.emb_dim = emb_dim
        self.tensors = dict(tensors)

    @classmethod
    def initialize(cls, config, emb_dim, rng):
        check_heads(config.d, config.heads)
        init_rng = rng.substream('init')
        tensors = {}
        for name, shape, init in _parameter_shapes(config, emb_dim):
            tensors[name] = Tensor(_initial_values(shape, init, init_rng), requires_grad=True, name=name)
        params = cls(config, emb_dim, tensors)
        logger.debug('initialized %d parameters in %d blocks', params.count(), len(tensors))
        return params

    @classmethod
    def shapes(cls, config, emb_dim):
        return [(name, shape) for name, shape, _init in _parameter_shapes(config, emb_dim)]

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def keys(self):
        return self.tensors.keys()

    def values(self):
        return self.tensors.values()

    def items(self):
        return self.tensors.items()

    def count(self):
        return int(sum(tensor.size for tensor in self.tensors.values()))

    def copy(self):
        return PrismParams(self.config, self.emb_dim, {name: t.copy() for name, t in self.tensors.items()})

    def grads(self):
        return {name: tensor.grad for name, tensor in self.tensors.items()}

    def zero_grads(self):
        for tensor in self.tensors.values():
            tensor.grad = None

    def checksum(self):
        digest = hashlib.blake2b(digest_size=16)
        for name, tensor in self.tensors.items():
            digest.update(name.encode('utf-8'))
            digest.update(np.ascontiguousarray(tensor.values, dtype='<f8').tobytes())
        return digest.hexdigest()


""" -----------------------------------------------------------------------
                                 INPUTS
    ------------------------------------------------------------------- """


@dataclass
class GraphContext:
    """ Everything a forward pass reads besides parameters """
    node_matrix: np.ndarray             # [V x emb_dim] text embeddings
    edge_matrix: np.ndarray             # [R x emb_dim]
    history: object                     # dytag_data.HistoryIndex

    @property
    def emb_dim(self):
        return self.node_matrix.shape[1]


@dataclass
class BehavioralBatch:
    """
    n interactions (u, v, t) with both endpoints' histories, [n x L] each
        - partners/edges are -1 and dt is 0 at padded positions
        - dt = t - t_i > 0 at every valid position
    """
    src: np.ndarray
    dst: np.ndarray
    times: np.ndarray
    u_partners: np.ndarray
    u_edges: np.ndarray
    u_dt: np.ndarray
    u_mask: np.ndarray
    v_partners: np.ndarray
    v_edges: np.ndarray
    v_dt: np.ndarray
    v_mask: np.ndarray

    def __len__(self):
        return self.src.shape[0]

    @property
    def u_has_history(self):
        return self.u_mask.any(axis=1)

    @property
    def v_has_history(self):
        return self.v_mask.any(axis=1)

    def without_destination_history(self):
        """ Same queries with the v-side emptied (source refined on its own evidence) """
        return BehavioralBatch(self.src, self.dst, self.times,
                               self.u_partners, self.u_edges, self.u_dt, self.u_mask,
                               np.full_like(self.v_partners, -1), np.full_like(self.v_edges, -1),
                               np.zeros_like(self.v_dt), np.zeros_like(self.v_mask))


def _side(history, nodes, times, L):
    partners, edges, event_times, mask = history.batch(nodes, times, L)
    dt = (times[:, None] - event_times) * mask
    if np.any(dt[mask > 0] <= 0.0):
        row = int(np.argwhere((dt <= 0.0) & (mask > 0))[0][0])
        raise CausalityError('history of node %(node)s holds an event at or after t=%(t)s',
                             code='causality', params={'node': int(nodes[row]), 't': float(times[row])})
    return partners, edges, dt, mask


def build_behavioral_batch(history, src, dst, times, L):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    times = np.asarray(times, dtype=np.float64)
    if not (src.shape == dst.shape == times.shape):
        raise DimensionError('src/dst/times lengths differ: %(s)s %(d)s %(t)s', code='batch_shape',
                             params={'s': src.shape, 'd': dst.shape, 't': times.shape})
    return BehavioralBatch(src, dst, times, *_side(history, src, times, L), *_side(history, dst, times, L))


""" -----------------------------------------------------------------------
                                 ENCODERS
    ------------------------------------------------------------------- """


def encode_semantic(embeddings, params):
    """ Text embeddings [n x emb_dim] -> semantic priors [n x d] """
    return ffn(as_tensor(embeddings), params, 'node_proj')


def encode_edges(embeddings, params):
    return ffn(as_tensor(embeddings), params, 'edge_proj')


def encode_time(dt, params, mask=None):
    """ phi(dt)_j = cos(omega_j * dt + phase_j); negative dt at a valid position is a causality error """
    dt = as_tensor(dt)
    valid = np.ones(dt.shape, dtype=bool) if mask is None else np.asarray(mask) > 0
    if np.any(dt.values[valid] < 0.0):
        raise CausalityError('negative time delta %(dt)s at a valid history position', code='negative_dt',
                             params={'dt': float(dt.values[valid].min())})
    angle = ops.add(ops.mul(ops.reshape(dt, dt.shape + (1,)), params['time_enc.omega']), params['time_enc.phase'])
    return ops.cos(angle)


def _local_index(ids, mask, universe):
    """ Positions of ids inside sorted ``universe``; padded slots point at row 0 """
    safe = np.where(mask > 0, ids, universe[0])
    return np.searchsorted(universe, safe)


def build_behavior_tokens(batch, context, params, semantic_rows=None):
    """
    Token sequences H_u, H_v [n x L x d]
        - inputs at padded positions are zeroed and outputs are multiplied by the mask
        - semantic_rows: optional (sorted node ids, priors Tensor) to reuse
    """
    if semantic_rows is None:
        semantic_rows = _semantic_rows(batch, context, params)
    nodes, priors = semantic_rows
    masks = (batch.u_mask, batch.v_mask)
    edge_ids = np.unique(np.concatenate([e[m > 0] for e, m in zip((batch.u_edges, batch.v_edges), masks)]))
    edge_vectors = encode_edges(context.edge_matrix[edge_ids], params) if edge_ids.size else None

    sides = []
    for partners, edges, dt, mask in ((batch.u_partners, batch.u_edges, batch.u_dt, batch.u_mask),
                                      (batch.v_partners, batch.v_edges, batch.v_dt, batch.v_mask)):
        gate = mask[..., None]
        partner_sem = ops.mul(ops.take_rows(priors, _local_index(partners, mask, nodes)), gate)
        if edge_vectors is not None:
            edge_sem = ops.mul(ops.take_rows(edge_vectors, _local_index(edges, mask, edge_ids)), gate)
        else:
            edge_sem = Tensor(np.zeros(partners.shape + (params.config.d,)))
        phi = ops.mul(encode_time(dt, params, mask), gate)
        tokens = ffn(ops.concat([partner_sem, edge_sem, phi], axis=-1), params, 'token_proj')
        sides.append(ops.mul(tokens, gate))
    return sides[0], sides[1]


def encode_behavior_pair(H_u, H_v, u_mask, v_mask, params):
    """
    Joint encoding of both histories
        returns B_u, B_v [n x L x d] and pooled b_u, b_v [n x d]; an empty side pools to zeros
    """
    config = params.config
    L = H_u.shape[1]
    if H_v.shape[1] != L:
        raise DimensionError('history lengths differ: %(u)s vs %(v)s', code='pair_length',
                             params={'u': H_u.shape, 'v': H_v.shape})
    mask = np.concatenate([u_mask, v_mask], axis=1)
    X = ops.concat([H_u, H_v], axis=1)
    for layer in range(config.enc_layers):
        X = transformer_encoder_layer(X, mask, params, 'encoder.%d' % layer, config.heads)
    X = ops.mul(ops.layer_norm(X, params['encoder.final_ln.gamma'], params['encoder.final_ln.beta']),
                mask[..., None])
    B_u = ops.slice_axis(X, 1, 0, L)
    B_v = ops.slice_axis(X, 1, L, 2 * L)
    return B_u, B_v, ops.masked_mean(B_u, u_mask), ops.masked_mean(B_v, v_mask)


""" -----------------------------------------------------------------------
                               REFINEMENT
    ------------------------------------------------------------------- """


@dataclass
class PosteriorTrajectory:
    """ states z(0..K), velocities dz(0..K-1), retrieved contexts c(0..K-1) """
    prior: object
    states: list = field(default_factory=list)
    velocities: list = field(default_factory=list)
    contexts: list = field(default_factory=list)

    @property
    def final(self):
        return self.states[-1]

    @property
    def steps(self):
        return len(self.velocities)


def retrieve_evidence(z, prior, B, mask, params, k):
    """ c = W_o . MultiHeadAttn(W_q [z || s], W_k B, W_v B); empty rows give c = 0 """
    config = params.config
    prefix = 'step.%d' % k
    n, d = z.shape
    query = ops.linear(ops.concat([z, prior], axis=-1), params[prefix + '.w_q'], params[prefix + '.b_q'])
    keys = ops.matmul(B, params[prefix + '.w_k'])
    values = ops.matmul(B, params[prefix + '.w_v'])
    attended = multi_head_attention(ops.reshape(query, (n, 1, d)), keys, values, mask, config.heads)
    return ops.matmul(ops.reshape(attended, (n, d)), params[prefix + '.w_o'])


def refine_posterior(prior, B, pooled, mask, params, K=None, initial=None):
    """
    K Euler steps from ``initial`` (the prior unless given)
        z(k+1) = z(k) + dz(k) / K,  dz(k) = FFN_v_k([z(k) || s || b || c(k)])
    """
    K = params.config.K if K is None else K
    prior = as_tensor(prior)
    z = prior if initial is None else as_tensor(initial)
    trajectory = PosteriorTrajectory(prior=prior, states=[z])
    for k in range(K):
        context = retrieve_evidence(z, prior, B, mask, params, k)
        velocity = ffn(ops.concat([z, prior, pooled, context], axis=-1), params, 'step.%d.velocity' % k)
        z = ops.add(z, ops.divide(velocity, K))
        trajectory.contexts.append(context)
        trajectory.velocities.append(velocity)
        trajectory.states.append(z)
    return trajectory


def decode_logits(z_u, z_v, params):
    logits = ffn(ops.concat([z_u, z_v], axis=-1), params, 'decoder')
    return ops.reshape(logits, (logits.shape[0],))


def decode_link(z_u, z_v, params):
    """ y = sigmoid(MLP([z_u || z_v])), one score per row """
    if z_u.shape != z_v.shape:
        raise DimensionError('decoder states differ in shape: %(u)s vs %(v)s', code='decode_shape',
                             params={'u': z_u.shape, 'v': z_v.shape})
    return ops.sigmoid(decode_logits(z_u, z_v, params))


""" -----------------------------------------------------------------------
                                 FORWARD
    ------------------------------------------------------------------- """


@dataclass
class ForwardResult:
    scores: object                      # y in (0, 1), [n]
    logits: object
    trajectory_u: PosteriorTrajectory
    trajectory_v: PosteriorTrajectory
    pooled_u: object
    pooled_v: object
    u_has_history: np.ndarray
    v_has_history: np.ndarray


def _semantic_rows(batch, context, params):
    valid = [batch.u_partners[batch.u_mask > 0], batch.v_partners[batch.v_mask > 0]]
    nodes = np.unique(np.concatenate([batch.src, batch.dst] + valid))
    return nodes, encode_semantic(context.node_matrix[nodes], params)


def _zero_state(n, d):
    return Tensor(np.zeros((n, d)))


def forward_batch(batch, context, params):
    """ Scores and trajectories for an already assembled BehavioralBatch """
    config = params.config
    n, d = len(batch), config.d
    nodes, priors = _semantic_rows(batch, context, params)
    s_u = ops.take_rows(priors, np.searchsorted(nodes, batch.src))
    s_v = ops.take_rows(priors, np.searchsorted(nodes, batch.dst))
    if not config.use_semantic:
        s_u, s_v = _zero_state(n, d), _zero_state(n, d)

    if not config.use_behavior:
        # Pure prior: no tokens, no refinement, no history-bearing instances
        empty = np.zeros(n, dtype=bool)
        traj_u = PosteriorTrajectory(prior=s_u, states=[s_u])
        traj_v = PosteriorTrajectory(prior=s_v, states=[s_v])
        logits = decode_logits(s_u, s_v, params)
        return ForwardResult(ops.sigmoid(logits), logits, traj_u, traj_v,
                             _zero_state(n, d), _zero_state(n, d), empty, empty)

    H_u, H_v = build_behavior_tokens(batch, context, params, semantic_rows=(nodes, priors))
    B_u, B_v, b_u, b_v = encode_behavior_pair(H_u, H_v, batch.u_mask, batch.v_mask, params)
    traj_u = refine_posterior(s_u, B_u, b_u, batch.u_mask, params)
    traj_v = refine_posterior(s_v, B_v, b_v, batch.v_mask, params)
    logits = decode_logits(traj_u.final, traj_v.final, params)
    return ForwardResult(ops.sigmoid(logits), logits, traj_u, traj_v, b_u, b_v,
                         batch.u_has_history, batch.v_has_history)


def forward(context, src, dst, times, params):
    """ Scores y_uv for interactions (u, v, t) with histories strictly before each t """
    batch = build_behavioral_batch(context.history, src, dst, times, params.config.L)
    return forward_batch(batch, context, params)


def encode_source(context, src, times, params):
    """ Final source states refined without a destination counterpart """
    src = np.asarray(src, dtype=np.int64)
    batch = build_behavioral_batch(context.history, src, src, times, params.config.L)
    return forward_batch(batch.without_destination_history(), context, params).trajectory_u.final

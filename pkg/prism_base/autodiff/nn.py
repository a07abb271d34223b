"""
Composite layers built from the primitives in ops

Layers read their weights from a flat mapping of name -> Tensor using a
dotted prefix, the same layout PrismParams stores.
"""
import numpy as np

from ..exceptions import ConfigurationError, DimensionError, EmptyEvidenceError
from . import ops


def ffn(x, params, prefix):
    """ Two-layer feed-forward block: w2 . gelu(w1 . x + b1) + b2 """
    hidden = ops.gelu(ops.linear(x, params[prefix + '.w1'], params[prefix + '.b1']))
    return ops.linear(hidden, params[prefix + '.w2'], params[prefix + '.b2'])


def masked_attention(q, K, V, mask):
    """
    Single-head scaled dot-product attention of one query per row
        - q [n x d], K/V [n x L x d], mask [n x L] of {0,1}
        - rows with no valid position raise EmptyEvidenceError
    """
    mask = np.asarray(mask, dtype=np.float64)
    n, d = q.shape
    if K.shape != (n, mask.shape[1], d) or V.shape != K.shape:
        raise DimensionError('attention shapes differ: q %(q)s K %(k)s V %(v)s mask %(m)s',
                             code='attention_shape',
                             params={'q': q.shape, 'k': K.shape, 'v': V.shape, 'm': mask.shape})
    empty = ~(mask > 0).any(axis=1)
    if empty.any():
        raise EmptyEvidenceError('empty evidence in rows %(rows)s', code='empty_evidence',
                                 params={'rows': np.flatnonzero(empty).tolist()})
    scores = ops.reshape(ops.matmul(K, ops.reshape(q, (n, d, 1))), (n, -1))
    weights = ops.masked_softmax(ops.scale(scores, 1.0 / np.sqrt(d)), mask)
    return ops.reshape(ops.matmul(ops.reshape(weights, (n, 1, -1)), V), (n, d))


def _split_heads(x, heads):
    """ [n, T, d] -> [n, heads, T, d/heads] """
    n, length, width = x.shape
    return ops.transpose(ops.reshape(x, (n, length, heads, width // heads)), (0, 2, 1, 3))


def check_heads(width, heads):
    if heads < 1 or width % heads:
        raise ConfigurationError('latent dim %(d)s is not divisible by %(heads)s heads',
                                 code='heads', params={'d': width, 'heads': heads})


def multi_head_attention(queries, keys, values, key_mask, heads):
    """
    Masked multi-head attention on already projected inputs
        - queries [n, Tq, d], keys/values [n, Tk, d], key_mask [n, Tk]
        - query rows whose keys are all masked come back as zeros
    """
    n, length, width = queries.shape
    check_heads(width, heads)
    q, k, v = (_split_heads(t, heads) for t in (queries, keys, values))
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(width // heads))
    mask = np.asarray(key_mask, dtype=np.float64)[:, None, None, :]
    weights = ops.masked_softmax(scores, mask, allow_empty=True)
    merged = ops.transpose(ops.matmul(weights, v), (0, 2, 1, 3))
    return ops.reshape(merged, (n, length, width))


def transformer_encoder_layer(X, mask, params, prefix, heads):
    """
    Pre-norm encoder layer:
        X1 = X + Attn(LN1(X)),  X2 = X1 + FFN(LN2(X1)),  out = X2 * mask
    Padded positions are never attended to and leave the layer as zeros.
    """
    check_heads(X.shape[-1], heads)
    mask = np.asarray(mask, dtype=np.float64)
    normed = ops.layer_norm(X, params[prefix + '.ln1.gamma'], params[prefix + '.ln1.beta'])
    q = ops.linear(normed, params[prefix + '.attn.w_q'], params[prefix + '.attn.b_q'])
    k = ops.linear(normed, params[prefix + '.attn.w_k'], params[prefix + '.attn.b_k'])
    v = ops.linear(normed, params[prefix + '.attn.w_v'], params[prefix + '.attn.b_v'])
    attended = multi_head_attention(q, k, v, mask, heads)
    X1 = ops.add(X, ops.linear(attended, params[prefix + '.attn.w_o'], params[prefix + '.attn.b_o']))
    normed = ops.layer_norm(X1, params[prefix + '.ln2.gamma'], params[prefix + '.ln2.beta'])
    X2 = ops.add(X1, ffn(normed, params, prefix + '.ffn'))
    return ops.mul(X2, mask[..., None])

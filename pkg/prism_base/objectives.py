"""
Training objectives

    total = task + l_recon * recon + l_margin * margin + l_step * step

The auxiliary terms only look at history-bearing instances: each endpoint of
each positive event whose history window is non-empty. Negative pairs feed
the task term only.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .app_settings import APP_NAME, SCORE_CLAMP
from .autodiff import ops
from .autodiff.nn import ffn
from .autodiff.tensor import Tensor, as_tensor
from .exceptions import NonFiniteError, NumericDomainError

logger = logging.getLogger('%s.objectives' % APP_NAME)


@dataclass
class BatchLossReport:
    task: float
    recon: float
    margin: float
    step: float
    total: float
    history_instances: int

    def as_row(self, step_index):
        return [step_index, self.task, self.recon, self.margin, self.step, self.total]


def _zero():
    return Tensor(np.zeros(()))


""" -----------------------------------------------------------------------
                               COMPONENTS
    ------------------------------------------------------------------- """


def task_loss(pos_scores, neg_scores):
    """ -(1/B) sum[log y_pos + log(1 - y_neg)], scores clamped to [eps, 1 - eps] """
    pos_scores, neg_scores = as_tensor(pos_scores), as_tensor(neg_scores)
    for label, scores in (('positive', pos_scores), ('negative', neg_scores)):
        values = scores.values
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise NumericDomainError('%(label)s score outside (0, 1): %(value)s', code='score_domain',
                                     params={'label': label, 'value': values[~((values >= 0.0) & (values <= 1.0))][0]})
    count = pos_scores.shape[0]
    pos = ops.log(ops.clip(pos_scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP))
    neg = ops.log(ops.sub(1.0, ops.clip(neg_scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)))
    return ops.scale(ops.reduce_sum(ops.add(pos, neg)), -1.0 / count)


def recon_loss(z_final, pooled, params):
    """ mean ||MLP_recon(z) - sg(b)||^2; the pooled behavior summary is a fixed target """
    z_final = as_tensor(z_final)
    if z_final.shape[0] == 0:
        return _zero()
    predicted = ffn(z_final, params, 'recon')
    return ops.reduce_mean(ops.sq_norm(ops.sub(predicted, ops.stop_gradient(pooled))))


def margin_loss(z_final, prior, margin):
    """ mean max(0, ||z - s||^2 - m) """
    z_final = as_tensor(z_final)
    if z_final.shape[0] == 0:
        return _zero()
    drift = ops.sq_norm(ops.sub(z_final, prior))
    return ops.reduce_mean(ops.relu(ops.sub(drift, float(margin))))


def step_loss(states, K):
    """ (1 / (K n)) sum_i sum_k ||z(k+1) - z(k)||^2 over the stacked states z(0..K) """
    if len(states) != K + 1:
        raise NumericDomainError('step loss needs %(want)s states, got %(got)s', code='step_states',
                                 params={'want': K + 1, 'got': len(states)})
    count = as_tensor(states[0]).shape[0]
    if count == 0 or K == 0:
        return _zero()
    total = None
    for previous, current in zip(states[:-1], states[1:]):
        term = ops.reduce_sum(ops.sq_norm(ops.sub(current, previous)))
        total = term if total is None else ops.add(total, term)
    return ops.scale(total, 1.0 / (K * count))


""" -----------------------------------------------------------------------
                          HISTORY-BEARING INSTANCES
    ------------------------------------------------------------------- """


@dataclass
class ObjectiveInputs:
    pos_scores: object
    neg_scores: object
    z_final: object                     # [|V_h| x d]
    prior: object
    pooled: object
    states: list                        # K + 1 tensors [|V_h| x d]
    K: int

    @property
    def history_instances(self):
        return self.z_final.shape[0]


def _stack_rows(u_tensor, v_tensor, u_rows, v_rows):
    return ops.concat([ops.take_rows(u_tensor, u_rows), ops.take_rows(v_tensor, v_rows)], axis=0)


def objective_inputs(result, num_positive):
    """
    Splits a forward over [positives; negatives] into loss inputs
        - rows [0, num_positive) are positives, the rest their negatives
    """
    u_rows = np.flatnonzero(result.u_has_history[:num_positive])
    v_rows = np.flatnonzero(result.v_has_history[:num_positive])
    traj_u, traj_v = result.trajectory_u, result.trajectory_v
    K = traj_u.steps
    states = [_stack_rows(zu, zv, u_rows, v_rows) for zu, zv in zip(traj_u.states, traj_v.states)]
    return ObjectiveInputs(
        pos_scores=ops.slice_axis(result.scores, 0, 0, num_positive),
        neg_scores=ops.slice_axis(result.scores, 0, num_positive, result.scores.shape[0]),
        z_final=states[-1],
        prior=_stack_rows(traj_u.prior, traj_v.prior, u_rows, v_rows),
        pooled=_stack_rows(result.pooled_u, result.pooled_v, u_rows, v_rows),
        states=states,
        K=K,
    )


""" -----------------------------------------------------------------------
                                  STACK
    ------------------------------------------------------------------- """

""" Ordered loss components
        - FUNCTION SIGNATURE:
            * component(objective_inputs, params, weights) -> scalar Tensor
"""
OBJECTIVE_STACK = {
    'task':     lambda inputs, params, weights: task_loss(inputs.pos_scores, inputs.neg_scores),
    'recon':    lambda inputs, params, weights: recon_loss(inputs.z_final, inputs.pooled, params),
    'margin':   lambda inputs, params, weights: margin_loss(inputs.z_final, inputs.prior, weights.margin),
    'step':     lambda inputs, params, weights: step_loss(inputs.states, inputs.K),
}


def stack_atomic_call_objective(name, component, inputs, params, weights, stack_logger):
    """ Evaluates one component; a non-finite value aborts naming the component """
    value = component(inputs, params, weights)
    if not np.all(np.isfinite(value.values)):
        stack_logger.error('OBJ_STACK: non-finite value in loss component %s', name)
        raise NonFiniteError('loss component %(component)s is not finite (%(value)s)',
                             code='non_finite_loss', params={'component': name, 'value': value.item()})
    return value


def total_loss(inputs, params, weights):
    """ -> (total Tensor, BatchLossReport); components are summed in stack order """
    stack_logger = logging.getLogger('%s.objective_stack' % APP_NAME)
    components = {name: stack_atomic_call_objective(name, func, inputs, params, weights, stack_logger)
                  for name, func in OBJECTIVE_STACK.items()}
    total = ops.add(ops.add(ops.add(components['task'],
                                    ops.scale(components['recon'], weights.lambda_recon)),
                            ops.scale(components['margin'], weights.lambda_margin)),
                    ops.scale(components['step'], weights.lambda_step))
    report = BatchLossReport(task=components['task'].item(), recon=components['recon'].item(),
                             margin=components['margin'].item(), step=components['step'].item(),
                             total=total.item(), history_instances=int(inputs.history_instances))
    return total, report


def combine_components(task, recon, margin, step, weights):
    """ Plain-float weighted sum in the order total_loss uses """
    return task + weights.lambda_recon * recon + weights.lambda_margin * margin + weights.lambda_step * step

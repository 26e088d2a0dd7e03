"""Pure-Python twin of ``_ckernels``: same API, numpy + the autodiff graph."""

from __future__ import annotations

import numpy as np


class ObjectiveKernel:
    def __init__(self, params):
        self.params = params

    def loss_and_grad(self, x_sp, x_mcc, speaker_idx, noise, weights, mode, sim_on_sample):
        from . import model, nn

        objective = {0: model.Objective.CDVAE, 1: model.Objective.VAE_SP,
                     2: model.Objective.VAE_MCC}[int(mode)]
        w = model.LossWeights(*(float(x) for x in weights))
        terms, leaves = model.objective_graph(self.params, x_sp, x_mcc, np.asarray(speaker_idx),
                                              noise, objective, bool(sim_on_sample))
        st = self.params.store
        grads = nn.backprop(model.total_graph(terms, w), leaves)
        st.grad[:] = st.flatten(grads)
        return np.array([float(terms[k].data) for k in ("wi", "kld", "cross", "sim")])


def adam_update(data, grad, m, v, t, lr, beta1, beta2, eps):
    n = data.shape[0]
    if grad.shape[0] != n or m.shape[0] != n or v.shape[0] != n:
        raise ValueError("adam_update: buffer lengths differ")
    live = grad != 0.0
    g = grad[live]
    mi = beta1 * m[live] + (1.0 - beta1) * g
    vi = beta2 * v[live] + (1.0 - beta2) * g * g
    step = lr / (1.0 - beta1 ** t)
    rbc2 = 1.0 / np.sqrt(1.0 - beta2 ** t)
    m[live] = mi
    v[live] = vi
    data[live] -= step * mi / (np.sqrt(vi) * rbc2 + eps)

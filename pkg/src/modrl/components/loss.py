"""(Double) DQN loss with importance weights and per-record n-step discounts."""
from __future__ import annotations

from modrl.graph.component import Component, api, graph_fn


class DQNLoss(Component):
    def __init__(self, name, num_actions, discount=0.99, double_q=True, huber_delta=1.0, n_step=1,
                 device=None):
        super().__init__(name, device)
        self.num_actions = int(num_actions)
        self.discount = float(discount)
        self.double_q = bool(double_q)
        self.huber_delta = None if huber_delta is None else float(huber_delta)
        self.n_step = int(n_step)

    @api
    def loss(self, q_s, q_target_sp, q_sp, actions, rewards, terminals, discounts, weights):
        return self._graph_fn_loss(q_s, q_target_sp, q_sp, actions, rewards, terminals, discounts, weights)

    @api
    def loss_fixed_discount(self, q_s, q_target_sp, q_sp, actions, rewards, terminals, weights):
        discounts = self._graph_fn_discounts(rewards)
        return self._graph_fn_loss(q_s, q_target_sp, q_sp, actions, rewards, terminals, discounts, weights)

    @graph_fn
    def _graph_fn_discounts(self, ops, rewards):
        return ops.mul(ops.ones_like(rewards, dtype="f64"), self.discount ** self.n_step)

    @graph_fn(returns=2)
    def _graph_fn_loss(self, ops, q_s, q_target_sp, q_sp, actions, rewards, terminals, discounts, weights):
        n = self.num_actions
        q_sa = ops.sum(ops.mul(q_s, ops.one_hot(actions, depth=n)), axis=-1)
        if self.double_q:
            best = ops.argmax(q_sp, axis=-1)
            next_value = ops.sum(ops.mul(q_target_sp, ops.one_hot(best, depth=n)), axis=-1)
        else:
            next_value = ops.max(q_target_sp, axis=-1)
        alive = ops.sub(1.0, ops.cast(terminals, dtype="f64"))
        target = ops.add(ops.cast(rewards, dtype="f64"), ops.mul(ops.mul(discounts, alive), next_value))
        td = ops.sub(ops.stop_gradient(target), q_sa)
        if self.huber_delta is None:
            per_item = ops.mul(ops.square(td), 0.5)
        else:
            d = self.huber_delta
            a = ops.abs(td)
            quadratic = ops.minimum(a, d)
            per_item = ops.add(ops.mul(ops.square(quadratic), 0.5), ops.mul(ops.sub(a, quadratic), d))
        loss = ops.mean(ops.mul(per_item, ops.cast(weights, dtype="f64")))
        return loss, td

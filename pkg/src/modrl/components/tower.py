"""The replicable learning unit of a DQN agent: policy, target policy and loss."""
from __future__ import annotations

from modrl.components.loss import DQNLoss
from modrl.components.policy import Policy
from modrl.graph.component import Component, api, graph_fn


class DQNTower(Component):
    def __init__(self, name, network, action_space, dueling=True, discount=0.99, double_q=True,
                 huber_delta=1.0, device=None):
        super().__init__(name, device)
        self.policy = self.add_subcomponent(Policy("policy", network, action_space, dueling))
        self.target = self.add_subcomponent(self.policy.copy("target-policy"))
        self.loss = self.add_subcomponent(DQNLoss("loss", self.policy.num_actions, discount, double_q,
                                                  huber_delta))
        self.expose_variables()

    @api
    def get_q(self, states):
        return self.policy.get_q(states)

    @api
    def policy_variables(self):
        return self.policy.get_variables()

    @api
    def target_variables(self):
        return self.target.get_variables()

    @api
    def loss_and_grads(self, records, weights):
        q_s = self.policy.get_q(records["states"])
        q_sp = self.policy.get_q(records["next_states"])
        q_target_sp = self.target.get_q(records["next_states"])
        loss, td = self.loss.loss(q_s, q_target_sp, q_sp, records["actions"], records["rewards"],
                                  records["terminals"], records["discounts"], weights)
        grads = self._graph_fn_gradients(loss, self.policy.get_variables())
        return loss, td, grads

    @graph_fn
    def _graph_fn_gradients(self, ops, loss, variables):
        keys = list(variables)
        return dict(zip(keys, ops.gradients(loss, [variables[k] for k in keys])))


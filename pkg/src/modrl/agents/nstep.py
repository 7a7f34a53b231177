"""Incremental n-step post-processing of per-environment transition streams."""
from __future__ import annotations

from collections import defaultdict

import numpy as np

RECORD_KEYS = ("states", "actions", "rewards", "terminals", "next_states", "discounts")


def nstep_records(transitions, n, gamma):
    """One record per start index; windows stop at n steps, a terminal, or the buffer end."""
    out = {k: [] for k in RECORD_KEYS}
    count = len(transitions)
    for i in range(count):
        ret, disc = 0.0, 1.0
        j = i
        while True:
            s, a, r, term, s_next = transitions[j]
            ret += disc * r
            disc *= gamma
            if term or j - i + 1 == n or j == count - 1:
                break
            j += 1
        out["states"].append(transitions[i][0])
        out["actions"].append(transitions[i][1])
        out["rewards"].append(ret)
        out["terminals"].append(bool(term))
        out["next_states"].append(s_next)
        out["discounts"].append(disc)
    return out


def stack_records(out, state_shape):
    return {
        "states": np.asarray(out["states"], np.float64).reshape((-1,) + state_shape),
        "actions": np.asarray(out["actions"], np.int64).reshape(-1),
        "rewards": np.asarray(out["rewards"], np.float64).reshape(-1),
        "terminals": np.asarray(out["terminals"], bool).reshape(-1),
        "next_states": np.asarray(out["next_states"], np.float64).reshape((-1,) + state_shape),
        "discounts": np.asarray(out["discounts"], np.float64).reshape(-1),
    }


class NStepBuffers:
    """Per-env fragments. A transition is complete once its next state is known (given
    explicitly, or taken from the following observation of the same env)."""

    def __init__(self, n_step, gamma, state_shape, flush_threshold=None):
        self.n = int(n_step)
        self.gamma = float(gamma)
        self.state_shape = tuple(state_shape)
        self.threshold = int(flush_threshold or n_step)
        self.complete = defaultdict(list)
        self.pending = {}

    def add(self, env_id, state, action, reward, terminal, next_state=None):
        """Returns a list of record batches ready for memory."""
        ready = []
        state = np.asarray(state, np.float64)
        prev = self.pending.pop(env_id, None)
        if prev is not None:
            ready += self._push(env_id, prev + (state,))
        item = (state, int(action), float(reward), bool(terminal))
        if terminal:
            s_next = state if next_state is None else np.asarray(next_state, np.float64)
            ready += self._push(env_id, item + (s_next,), force=True)
        elif next_state is not None:
            ready += self._push(env_id, item + (np.asarray(next_state, np.float64),))
        else:
            self.pending[env_id] = item
        return ready

    def _push(self, env_id, transition, force=False):
        buf = self.complete[env_id]
        buf.append(transition)
        if force or transition[3] or len(buf) >= self.threshold:
            return [self._flush(env_id)]
        return []

    def _flush(self, env_id):
        buf = self.complete.pop(env_id)
        return stack_records(nstep_records(buf, self.n, self.gamma), self.state_shape)

    def flush_all(self):
        """Emit every complete transition, e.g. at the end of a run."""
        return [self._flush(env_id) for env_id in list(self.complete) if self.complete[env_id]]

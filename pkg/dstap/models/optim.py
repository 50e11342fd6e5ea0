from dataclasses import dataclass, field

import torch


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        return state


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam update of `params` (name -> tensor) in place."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name].mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v = state.v[name].mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        p.sub_(state.lr * (m / bc1) / (torch.sqrt(v / bc2) + state.eps))
    return params, state

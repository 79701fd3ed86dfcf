"""Shared test utilities: central finite differences and small fixtures."""

from __future__ import annotations

import numpy as np

from pgfdc.gradcore import no_grad

FD_STEP = 1e-5
# gradients smaller than this are compared absolutely rather than relatively
GRAD_FLOOR = 1e-6


def fd_relative_errors(loss_fn, params, rng, coords_per_param=4, h=FD_STEP):
    """Compare backward() with central differences on random coordinates.

    ``loss_fn`` must build a fresh graph and return a scalar Tensor. Returns a
    list of ``(name, index, analytic, numeric, rel_err)``.
    """
    for _, p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: p.grad.copy() for name, p in params}
    out = []
    for name, p in params:
        flat = p.data.reshape(-1)
        assert np.shares_memory(flat, p.data), f"{name} is not contiguous"
        picks = rng.choice(flat.size, size=min(coords_per_param, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
            flat[i] = orig
            num = (up - down) / (2 * h)
            ana = float(analytic[name].reshape(-1)[i])
            rel = abs(ana - num) / max(abs(ana), abs(num), GRAD_FLOOR)
            out.append((name, int(i), ana, num, rel))
    return out


def worst(errors):
    return max(errors, key=lambda e: e[-1])


def random_obs(rng, n, scale=1.0):
    """Observation-shaped inputs in [0, 1]; continuous so ReLU kinks and pool ties are unlikely."""
    return rng.uniform(0.0, scale, size=(n, 3, 7, 7))


def network_gradcheck(kind: str, seed: int, coords_per_param: int = 3):
    """Finite-difference check of one network on random inputs; returns the error list.

    ``kind``: ``policy`` (action head), ``value`` (value head), ``discriminator``,
    ``curiosity`` (G_e, G_i and G_f end to end through the combined loss).
    """
    from pgfdc.gradcore import tensor as T
    from pgfdc.intrinsic import curiosity_loss
    from pgfdc.models import CuriosityNets, DiscriminatorNet, PolicyNet

    rng = np.random.default_rng(seed)
    n, n_actions = 5, 3 + 2 * (seed % 2)
    obs = random_obs(rng, n)
    acts = rng.integers(0, n_actions, size=n)
    if kind in ("policy", "value"):
        # a larger head gain keeps the policy gradient well above the comparison floor
        net = PolicyNet(n_actions, rng, head_gain=1.0)
        w = rng.standard_normal((n, n_actions))
        v = rng.standard_normal(n)

        def loss():
            logits, values = net(obs)
            if kind == "policy":
                return (T.log_softmax(logits) * w).sum()
            return (values * v).sum()

        names = [(k, p) for k, p in net.named_parameters() if not k.startswith(("v_", "pi_"))]
        names += [(k, p) for k, p in net.named_parameters() if k.startswith("pi_" if kind == "policy" else "v_")]
    elif kind == "discriminator":
        net = DiscriminatorNet(n_actions, rng)
        y = rng.integers(0, 2, size=n).astype(float)

        def loss():
            z = net.logits(obs, acts)
            return (T.log_sigmoid(z) * y + T.log_sigmoid(-z) * (1.0 - y)).sum()

        names = list(net.named_parameters())
    elif kind == "curiosity":
        net = CuriosityNets(n_actions, rng, detach_features=False)
        nxt = random_obs(rng, n)

        def loss():
            return curiosity_loss(net, obs, acts, nxt, beta=0.5)[0]

        names = list(net.named_parameters())
    else:
        raise ValueError(kind)
    return fd_relative_errors(loss, names, rng, coords_per_param=coords_per_param)


# one "PASS/FAIL criterion N: ..." line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line

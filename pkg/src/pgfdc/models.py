"""Actor-critic policy, discriminator and curiosity networks built on gradcore."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcore import tensor as T
from .gradcore.layers import RELU_GAIN, Conv2d, Dense, Module, one_hot
from .gradcore.tensor import ShapeError, Tensor

OBS_SHAPE = (3, 7, 7)
FEATURE_DIM = 32


def _batch_obs(obs) -> np.ndarray:
    arr = obs.data if isinstance(obs, Tensor) else np.asarray(obs, dtype=np.float64)
    if arr.shape == OBS_SHAPE:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1:] != OBS_SHAPE:
        raise ShapeError(f"expected observations of shape (N, 3, 7, 7) or (3, 7, 7), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite observation")
    return arr


def _actions(actions, n_actions: int, batch: int) -> np.ndarray:
    a = np.asarray(actions, dtype=np.int64).reshape(-1)
    if a.size != batch:
        raise ShapeError(f"got {a.size} actions for a batch of {batch} observations")
    return one_hot(a, n_actions)


class PolicyNet(Module):
    """Shared conv trunk with separate 64-unit tanh branches for policy and value.

    Shapes for a 3x7x7 input: conv2x2 -> 16x6x6, pool -> 16x3x3,
    conv2x2 -> 32x2x2, conv2x2 -> 64x1x1, flatten -> 64.
    """

    input_shape = OBS_SHAPE

    def __init__(self, n_actions: int, rng: np.random.Generator, head_gain: float = 0.01):
        self.n_actions = n_actions
        self.conv1 = Conv2d(3, 16, 2, rng, gain=RELU_GAIN)
        self.conv2 = Conv2d(16, 32, 2, rng, gain=RELU_GAIN)
        self.conv3 = Conv2d(32, 64, 2, rng, gain=RELU_GAIN)
        self.pi_hidden = Dense(64, 64, rng)
        self.pi_out = Dense(64, n_actions, rng, gain=head_gain)
        self.v_hidden = Dense(64, 64, rng)
        self.v_out = Dense(64, 1, rng)

    def trunk(self, x: Tensor) -> Tensor:
        h = T.maxpool2x2(T.relu(self.conv1(x)))
        h = T.relu(self.conv2(h))
        h = T.relu(self.conv3(h))
        return T.flatten(h)

    def __call__(self, obs) -> tuple[Tensor, Tensor]:
        """Returns (action logits (N, |A|), values (N,))."""
        x = Tensor(_batch_obs(obs))
        h = self.trunk(x)
        logits = self.pi_out(T.tanh(self.pi_hidden(h)))
        value = self.v_out(T.tanh(self.v_hidden(h)))
        return logits, T.reshape(value, (-1,))

    def policy_forward(self, obs) -> tuple[np.ndarray, np.ndarray]:
        """Action probabilities and value estimates as plain arrays."""
        with T.no_grad():
            logits, value = self(obs)
            probs = T.softmax(logits).data
        return probs, value.data


class DiscriminatorNet(Module):
    """Scores how expert-like a state-action pair is; ``D = sigmoid(logit)``."""

    input_shape = OBS_SHAPE

    def __init__(self, n_actions: int, rng: np.random.Generator):
        self.n_actions = n_actions
        self.a_fc1 = Dense(n_actions, 16, rng, gain=RELU_GAIN)
        self.a_fc2 = Dense(16, 8, rng, gain=RELU_GAIN)
        self.s_conv1 = Conv2d(3, 16, 2, rng, gain=RELU_GAIN)
        self.s_conv2 = Conv2d(16, 32, 2, rng, gain=RELU_GAIN)
        self.s_fc1 = Dense(32, 16, rng, gain=RELU_GAIN)
        self.s_fc2 = Dense(16, 4, rng, gain=RELU_GAIN)
        self.joint = Dense(12, 4, rng, gain=RELU_GAIN)
        self.out = Dense(4, 1, rng)

    def logits(self, obs, actions) -> Tensor:
        x = _batch_obs(obs)
        a = Tensor(_actions(actions, self.n_actions, x.shape[0]))
        ha = T.relu(self.a_fc2(T.relu(self.a_fc1(a))))
        # 7x7 -> 6x6 -> pool 3x3 -> 2x2 -> pool 1x1
        hs = T.maxpool2x2(T.relu(self.s_conv1(Tensor(x))))
        hs = T.maxpool2x2(T.relu(self.s_conv2(hs)))
        hs = T.relu(self.s_fc2(T.relu(self.s_fc1(T.flatten(hs)))))
        h = T.relu(self.joint(T.concat([ha, hs], axis=1)))
        return T.reshape(self.out(h), (-1,))

    def __call__(self, obs, actions) -> Tensor:
        return T.sigmoid(self.logits(obs, actions))

    def score(self, obs, actions) -> np.ndarray:
        with T.no_grad():
            return self(obs, actions).data


class CuriosityNets(Module):
    """Feature embedding, inverse model and forward model.

    The embedding is trained by the inverse loss only; the forward model sees
    detached features unless ``detach_features`` is False.
    """

    input_shape = OBS_SHAPE

    def __init__(
        self,
        n_actions: int,
        rng: np.random.Generator,
        sigmoid_inverse: bool = False,
        detach_features: bool = True,
    ):
        self.n_actions = n_actions
        self.sigmoid_inverse = sigmoid_inverse
        self.detach_features = detach_features
        # 7x7 -> 5x5 -> 3x3 -> 1x1 -> 1x1 (padding 1)
        self.e_conv1 = Conv2d(3, 16, 3, rng)
        self.e_conv2 = Conv2d(16, 16, 3, rng)
        self.e_conv3 = Conv2d(16, 16, 3, rng)
        self.e_conv4 = Conv2d(16, 16, 3, rng, padding=1)
        self.e_proj = Dense(16, FEATURE_DIM, rng)
        self.i_fc = Dense(2 * FEATURE_DIM, 64, rng, gain=RELU_GAIN)
        self.i_out = Dense(64, n_actions, rng)
        self.f_fc = Dense(FEATURE_DIM + n_actions, 128, rng, gain=RELU_GAIN)
        self.f_out = Dense(128, FEATURE_DIM, rng)

    def embed(self, obs) -> Tensor:
        h = Tensor(_batch_obs(obs))
        for conv in (self.e_conv1, self.e_conv2, self.e_conv3, self.e_conv4):
            h = T.elu(conv(h))
        return self.e_proj(T.flatten(h))

    def forward_model(self, feat: Tensor, actions) -> Tensor:
        a = Tensor(_actions(actions, self.n_actions, feat.shape[0]))
        return self.f_out(T.relu(self.f_fc(T.concat([feat, a], axis=1))))

    def __call__(self, s_t, actions, s_next) -> "CuriosityOutput":
        acts = np.asarray(actions, dtype=np.int64).reshape(-1)
        f_t = self.embed(s_t)
        f_next = self.embed(s_next)
        logits = self.i_out(T.relu(self.i_fc(T.concat([f_t, f_next], axis=1))))
        target = _actions(acts, self.n_actions, f_t.shape[0])
        if self.sigmoid_inverse:
            probs = T.sigmoid(logits)
            bce = T.log_sigmoid(logits) * target + T.log_sigmoid(-logits) * (1.0 - target)
            l_ei = -T.tsum(bce, axis=1).mean()
        else:
            probs = T.softmax(logits)
            l_ei = -T.take_rows(T.log_softmax(logits), acts).mean()
        if self.detach_features:
            f_t_in, f_target = f_t.detach(), f_next.detach()
        else:
            f_t_in, f_target = f_t, f_next
        f_pred = self.forward_model(f_t_in, acts)
        diff = f_pred - f_target
        per_sample = T.tsum(diff * diff, axis=1) * 0.5
        return CuriosityOutput(probs, f_next, f_pred, l_ei, per_sample.mean(), per_sample)


@dataclass
class CuriosityOutput:
    inverse_probs: Tensor
    features_next: Tensor
    predicted_next: Tensor
    l_ei: Tensor
    l_f: Tensor
    l_f_per_sample: Tensor


def forward_loss(predicted: np.ndarray, actual: np.ndarray) -> np.ndarray:
    """Half squared L2 distance per row."""
    d = np.asarray(predicted) - np.asarray(actual)
    return 0.5 * np.sum(d * d, axis=-1)


def namespaced(prefix: str, module: Module) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in module.state_dict().items()}


def load_namespaced(prefix: str, module: Module, params: dict[str, np.ndarray]) -> None:
    p = f"{prefix}/"
    module.load_state_dict({k[len(p) :]: v for k, v in params.items() if k.startswith(p)})

"""Feed-forward attribute predictor.

The network maps a fixed-length image feature vector to the attribute
vector space: four fully connected layers, each followed by batch
normalization and ReLU, with dropout after the first three. The final
ReLU keeps predictions non-negative, matching the non-negative target
vectors. Batch normalization on the output layer can be disabled via
configuration; it is on by default.

Training minimizes mean squared error with Adam. The dataset is the
inner join of a feature table and an attribute table on ``image_id``;
any mismatch between the two id sets is a hard error, because silent
misalignment of rows would corrupt training undetectably.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import nncore
from .nncore import (
    AdamState,
    BatchNormState,
    DimensionError,
    ParameterError,
    Rng,
    adam_step,
    affine_backward,
    affine_forward,
    batchnorm_backward,
    batchnorm_forward,
    dropout_backward,
    dropout_forward,
    relu_backward,
    relu_forward,
    xavier_init,
)

__all__ = [
    "AttrNet",
    "AttrNetConfig",
    "AttrTrainConfig",
    "JoinError",
    "join_on_image_id",
    "load_attrnet",
    "load_attrnet_ensemble",
    "mse_loss",
    "predict_ensemble",
    "save_attrnet",
    "save_attrnet_ensemble",
    "train_attrnet",
    "train_attrnet_ensemble",
]

_N_LAYERS = 4


class JoinError(ValueError):
    """Raised when feature and attribute tables disagree on image ids."""


@dataclass
class AttrNetConfig:
    """Architecture of the attribute predictor."""

    n_words: int
    feature_dim: int = 2048
    hidden_dim: int = 2048
    dropout: float = 0.3
    bn_on_output: bool = True


@dataclass
class AttrTrainConfig:
    """Optimization settings for :func:`train_attrnet`."""

    learning_rate: float = 3e-3
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    ensemble_size: int = 5


def mse_loss(pred, target):
    """Mean squared error over all elements; returns ``(loss, dpred)``."""
    if pred.shape != target.shape:
        raise DimensionError(
            f"prediction shape {pred.shape} does not match target {target.shape}"
        )
    diff = pred - target
    loss = float(np.mean(diff * diff))
    dpred = (2.0 / diff.size) * diff
    return loss, dpred


def join_on_image_id(feature_ids, features, attr_ids, attrs):
    """Align feature rows with attribute rows by image id.

    Returns ``(ids, x, y)`` ordered like ``feature_ids``. The two id
    sets must match exactly; the error message lists the ids missing
    from either side.
    """
    feature_set = set(feature_ids)
    attr_set = set(attr_ids)
    if len(feature_ids) != len(feature_set):
        raise JoinError("feature table contains duplicate image ids")
    if len(attr_ids) != len(attr_set):
        raise JoinError("attribute table contains duplicate image ids")
    missing_attrs = sorted(feature_set - attr_set)
    missing_feats = sorted(attr_set - feature_set)
    if missing_attrs or missing_feats:
        raise JoinError(
            "feature/attribute tables do not cover the same images; "
            f"ids without attributes: {missing_attrs}; "
            f"ids without features: {missing_feats}"
        )
    attr_row = {image_id: row for image_id, row in zip(attr_ids, attrs)}
    y = np.stack([attr_row[image_id] for image_id in feature_ids])
    return list(feature_ids), np.asarray(features, dtype=np.float64), y


class AttrNet:
    """Four-layer perceptron from image features to attribute vectors."""

    def __init__(self, config, seed=0, params=None, bn_states=None):
        self.config = config
        dims = (
            [config.feature_dim]
            + [config.hidden_dim] * (_N_LAYERS - 1)
            + [config.n_words]
        )
        self._bn_layers = [
            k for k in range(1, _N_LAYERS + 1)
            if k < _N_LAYERS or config.bn_on_output
        ]
        if params is None:
            root = Rng(seed)
            params = {}
            for k in range(1, _N_LAYERS + 1):
                params[f"fc{k}.w"] = xavier_init(dims[k - 1], dims[k], root.split(k))
                if k not in self._bn_layers:
                    # A bias feeding batch normalization is cancelled by the
                    # mean subtraction; only BN-free layers carry one.
                    params[f"fc{k}.b"] = np.zeros(dims[k], dtype=np.float64)
            for k in self._bn_layers:
                params[f"bn{k}.gamma"] = np.ones(dims[k], dtype=np.float64)
                params[f"bn{k}.beta"] = np.zeros(dims[k], dtype=np.float64)
        self.params = params
        if bn_states is None:
            bn_states = {k: BatchNormState.create(dims[k]) for k in self._bn_layers}
        self.bn_states = bn_states

    def forward(self, x, mode="inference", rng=None, params=None):
        """Run the network; returns ``(predictions, caches)``.

        Train mode uses batch statistics (and updates running ones) and
        applies dropout masks drawn from ``rng``; inference mode uses
        running statistics and no dropout.
        """
        p = self.params if params is None else params
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.feature_dim:
            raise DimensionError(
                f"expected features of shape (N, {self.config.feature_dim}), "
                f"got {x.shape}"
            )
        caches = []
        out = x
        for k in range(1, _N_LAYERS + 1):
            w = p[f"fc{k}.w"]
            if k in self._bn_layers:
                bias = np.zeros(w.shape[1], dtype=np.float64)
            else:
                bias = p[f"fc{k}.b"]
            out, fc_cache = affine_forward(out, w, bias)
            if k in self._bn_layers:
                out, bn_cache = batchnorm_forward(
                    out, p[f"bn{k}.gamma"], p[f"bn{k}.beta"],
                    self.bn_states[k], mode,
                )
            else:
                bn_cache = None
            out, relu_cache = relu_forward(out)
            if k < _N_LAYERS:
                out, drop_cache = dropout_forward(
                    out, self.config.dropout, mode, rng
                )
            else:
                drop_cache = None
            caches.append((fc_cache, bn_cache, relu_cache, drop_cache))
        return out, caches

    def backward(self, dout, caches):
        """Backpropagate through the cached forward pass."""
        grads = {}
        for k in range(_N_LAYERS, 0, -1):
            fc_cache, bn_cache, relu_cache, drop_cache = caches[k - 1]
            if drop_cache is not None:
                dout = dropout_backward(dout, drop_cache)
            dout = relu_backward(dout, relu_cache)
            if bn_cache is not None:
                dout, dgamma, dbeta = batchnorm_backward(dout, bn_cache)
                grads[f"bn{k}.gamma"] = dgamma
                grads[f"bn{k}.beta"] = dbeta
            dout, dw, db = affine_backward(dout, fc_cache)
            grads[f"fc{k}.w"] = dw
            if k not in self._bn_layers:
                grads[f"fc{k}.b"] = db
        return grads

    def loss(self, x, target, mode="train", rng=None, params=None):
        """MSE loss and parameter gradients for one batch."""
        pred, caches = self.forward(x, mode=mode, rng=rng, params=params)
        value, dpred = mse_loss(pred, np.asarray(target, dtype=np.float64))
        grads = self.backward(dpred, caches)
        return value, grads

    def predict(self, x):
        """Inference-mode attribute predictions (non-negative)."""
        out, _ = self.forward(x, mode="inference")
        return out

    # -- checkpoint plumbing -------------------------------------------------

    def tensors(self):
        """All state as named tensors, including BN running statistics."""
        out = dict(self.params)
        for k, state in self.bn_states.items():
            out[f"bn{k}.running_mean"] = state.running_mean
            out[f"bn{k}.running_var"] = state.running_var
        return out

    @classmethod
    def from_tensors(cls, config, tensors):
        params = {
            name: value for name, value in tensors.items()
            if not name.endswith((".running_mean", ".running_var"))
        }
        net = cls(config, params=params, bn_states={})
        net.bn_states = {
            k: BatchNormState(
                running_mean=tensors[f"bn{k}.running_mean"],
                running_var=tensors[f"bn{k}.running_var"],
            )
            for k in net._bn_layers
        }
        return net


def _batch_slices(n, batch_size):
    """Contiguous batch index ranges; a trailing singleton is merged into
    the previous batch so batch normalization always sees at least two rows."""
    if batch_size < 1:
        raise ParameterError(f"batch size must be positive, got {batch_size}")
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        del bounds[-2]
    return list(zip(bounds[:-1], bounds[1:]))


def train_attrnet(x, y, net_config, train_config):
    """Train an attribute predictor; returns ``(net, epoch_losses)``.

    ``x`` is (M, feature_dim), ``y`` is (M, n_words). Every epoch
    reshuffles the rows with a stream derived from the training seed;
    ``epoch_losses`` records the size-weighted mean batch MSE per epoch.
    Training runs for exactly ``train_config.epochs`` epochs; there is
    no early stopping here.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise DimensionError(
            f"feature rows {x.shape[0]} != attribute rows {y.shape[0]}"
        )
    if x.shape[0] < 2:
        raise ParameterError(
            "training needs at least 2 examples (batch normalization)"
        )
    root = Rng(train_config.seed)
    net = AttrNet(net_config, seed=root.split(0).seed)
    adam = AdamState(learning_rate=train_config.learning_rate)
    m = x.shape[0]
    epoch_losses = []
    for epoch in range(train_config.epochs):
        epoch_rng = root.split(epoch + 1)
        order = epoch_rng.permutation(m)
        total = 0.0
        for start, stop in _batch_slices(m, train_config.batch_size):
            batch = order[start:stop]
            loss, grads = net.loss(x[batch], y[batch], mode="train", rng=epoch_rng)
            net.params = adam_step(net.params, grads, adam)
            total += loss * len(batch)
        epoch_losses.append(total / m)
    return net, epoch_losses


def train_attrnet_ensemble(x, y, net_config, train_config, n_members=None):
    """Train ``n_members`` predictors differing only in their seed.

    ``n_members`` defaults to ``train_config.ensemble_size``.
    """
    if n_members is None:
        n_members = train_config.ensemble_size
    if n_members < 1:
        raise ParameterError(f"ensemble needs at least one member, got {n_members}")
    seed_root = Rng(train_config.seed)
    members = []
    for m in range(n_members):
        member_config = AttrTrainConfig(**{
            **asdict(train_config), "seed": seed_root.split(m + 1).seed,
        })
        net, _ = train_attrnet(x, y, net_config, member_config)
        members.append(net)
    return members


def predict_ensemble(nets, x):
    """Elementwise ensemble mean of member predictions.

    Uses the order-invariant mean, so a one-member ensemble returns
    exactly that member's predictions and identical members yield
    predictions identical to any one of them.
    """
    if not nets:
        raise ParameterError("ensemble prediction needs at least one member")
    return nncore.ensemble_mean(np.stack([net.predict(x) for net in nets]))


# --------------------------------------------------------------------------
# Checkpoint formats
# --------------------------------------------------------------------------


def _config_payload(config):
    return {"kind": "attrnet", "net": asdict(config)}


def save_attrnet(path, net, extra_meta=None):
    from .storage import save_checkpoint

    config = _config_payload(net.config)
    if extra_meta:
        config["meta"] = extra_meta
    save_checkpoint(path, net.tensors(), config)


def load_attrnet(path):
    from .storage import FormatError, load_checkpoint

    tensors, config = load_checkpoint(path)
    if config.get("kind") != "attrnet":
        raise FormatError(f"{path}: not an attribute-predictor checkpoint")
    net_config = AttrNetConfig(**config["net"])
    return AttrNet.from_tensors(net_config, tensors)


def save_attrnet_ensemble(path, nets, extra_meta=None):
    """Store all members in one checkpoint under member-prefixed names."""
    from .storage import save_checkpoint

    tensors = {}
    for m, net in enumerate(nets):
        for name, value in net.tensors().items():
            tensors[f"member{m}.{name}"] = value
    config = {
        "kind": "attrnet_ensemble",
        "n_members": len(nets),
        "net": asdict(nets[0].config),
    }
    if extra_meta:
        config["meta"] = extra_meta
    save_checkpoint(path, tensors, config)


def load_attrnet_ensemble(path):
    from .storage import FormatError, load_checkpoint

    tensors, config = load_checkpoint(path)
    kind = config.get("kind")
    if kind == "attrnet":
        net_config = AttrNetConfig(**config["net"])
        return [AttrNet.from_tensors(net_config, tensors)]
    if kind != "attrnet_ensemble":
        raise FormatError(f"{path}: not an attribute-predictor checkpoint")
    net_config = AttrNetConfig(**config["net"])
    members = []
    for m in range(int(config["n_members"])):
        prefix = f"member{m}."
        member_tensors = {
            name[len(prefix):]: value
            for name, value in tensors.items()
            if name.startswith(prefix)
        }
        members.append(AttrNet.from_tensors(net_config, member_tensors))
    return members

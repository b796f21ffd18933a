"""Multimodal feature extractors: Multi-Embedding, Bimodal Autoencoder and
Multimodal Residual Network, with early-stopped training and feature taps.
"""
from __future__ import annotations

import copy
import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autograd as ag
from .autograd import Tensor, no_grad
from .data import FeatureMatrix, MultimodalInput
from .errors import ConfigError, ContractError
from .nn import LSTM, Conv2D, Dense, Layer, embed

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    lstm_size: int = 256
    latent_dim: int = 256
    fusion_dim: int = 256
    n_residual_blocks: int = 2
    head_hidden: int = 128
    n_classes: int = 3
    conv_filters: int = 8
    conv_kernel: int = 3
    conv_stride: int = 2
    embed_dim: int = 50
    text_weight: float = 1.0
    latent_activation: str = "tanh"

    def validate(self):
        for name in ("lstm_size", "latent_dim", "fusion_dim", "head_hidden", "n_classes",
                     "conv_filters", "conv_kernel", "conv_stride", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_residual_blocks != 2:
            raise ConfigError("the residual network has exactly two blocks (RB1, RB2)")
        if self.latent_activation not in ("tanh", "identity"):
            raise ConfigError(f"unknown latent_activation {self.latent_activation!r}")
        return self


@dataclass
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 32
    patience: int = 5
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")
        return self


class FeatureTap(str, enum.Enum):
    ME_AVG = "me_avg"
    BIAE_LATENT = "biae_latent"
    RB1 = "rb1"
    RB2 = "rb2"


ARCH_TAPS = {
    "me": (FeatureTap.ME_AVG,),
    "biae": (FeatureTap.BIAE_LATENT,),
    "mrn": (FeatureTap.RB1, FeatureTap.RB2),
}


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_text(self):
        lines = ["epoch,train_loss,val_loss"]
        for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss), 1):
            lines.append(f"{i},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


def _check_images(images):
    if images.min(initial=0.0) < 0.0 or images.max(initial=0.0) > 1.0:
        raise ContractError("images must be min-max normalized into [0, 1]")


class _ImageEncoder(Layer):
    """conv -> (optional ReLU) -> flatten -> dense."""

    def __init__(self, image_shape, cfg, out_dim, rng, activation):
        super().__init__()
        h, w, c = image_shape
        k = cfg.conv_kernel
        if h < k or w < k:
            raise ConfigError(f"images of {h}x{w} are smaller than the {k}x{k} kernel")
        self.conv = self.add_child("conv", Conv2D(c, cfg.conv_filters, (k, k), cfg.conv_stride, rng))
        self.flat = int(np.prod(self.conv.output_shape(h, w)))
        self.dense = self.add_child("dense", Dense(self.flat, out_dim, rng))
        self.activation = activation

    def __call__(self, images):
        z = self.conv(Tensor(images))
        if self.activation:
            z = z.relu()
        return self.dense(z.reshape(z.shape[0], self.flat))


class MultiEmbeddingNet(Layer):
    """Two LSTMs over two frozen embedding tables, averaged, then an FFNN head."""

    arch = "me"
    supervised = True

    def __init__(self, cfg, tables, rng):
        super().__init__()
        if len(tables) != 2:
            raise ConfigError("the multi-embedding model needs two embedding tables")
        for t in tables:
            if t.shape[1] != cfg.embed_dim:
                raise ConfigError(f"embedding table has dim {t.shape[1]}, config declares {cfg.embed_dim}")
        self.cfg = cfg
        self.tables = tables
        self.lstm_a = self.add_child("lstm_a", LSTM(cfg.embed_dim, cfg.lstm_size, rng))
        self.lstm_b = self.add_child("lstm_b", LSTM(cfg.embed_dim, cfg.lstm_size, rng))
        self.hidden = self.add_child("hidden", Dense(cfg.lstm_size, cfg.head_hidden, rng))
        self.out = self.add_child("out", Dense(cfg.head_hidden, cfg.n_classes, rng))

    def forward(self, X):
        mask = X.mask
        a = self.lstm_a(embed(self.tables[0], X.token_ids), mask)
        b = self.lstm_b(embed(self.tables[1], X.token_ids), mask)
        features = (a + b) * 0.5
        logits = self.out(self.hidden(features).relu())
        return {FeatureTap.ME_AVG: features, "logits": logits}

    def loss(self, X, y):
        return ag.softmax_cross_entropy(self.forward(X)["logits"], y)


class BimodalAutoencoderNet(Layer):
    """Text and image encoders merged into one latent code that reconstructs both."""

    arch = "biae"
    supervised = False

    def __init__(self, cfg, tables, rng, seq_len, image_shape):
        super().__init__()
        table = tables[0]
        if table.shape[1] != cfg.embed_dim:
            raise ConfigError(f"embedding table has dim {table.shape[1]}, config declares {cfg.embed_dim}")
        self.cfg = cfg
        self.table = table
        self.seq_len = seq_len
        self.pixels = int(np.prod(image_shape))
        d = cfg.latent_dim
        self.text_lstm = self.add_child("text_lstm", LSTM(cfg.embed_dim, cfg.lstm_size, rng))
        self.text_proj = self.add_child("text_proj", Dense(cfg.lstm_size, d, rng))
        self.image_enc = self.add_child("image_enc", _ImageEncoder(image_shape, cfg, d, rng, activation=True))
        self.joint = self.add_child("joint", Dense(2 * d, d, rng))
        self.text_dec = self.add_child("text_dec", Dense(d, seq_len * cfg.embed_dim, rng))
        self.image_dec = self.add_child("image_dec", Dense(d, self.pixels, rng))

    def forward(self, X):
        _check_images(X.images)
        n = len(X)
        steps = embed(self.table, X.token_ids)
        e_t = self.text_proj(self.text_lstm(steps, X.mask))
        e_v = self.image_enc(X.images)
        z = self.joint(ag.concat([e_t, e_v], axis=1))
        latent = z.tanh() if self.cfg.latent_activation == "tanh" else z
        text_target = self.table[np.asarray(X.token_ids, dtype=np.intp)].reshape(n, -1)
        mse_text = ag.mse(self.text_dec(latent), text_target)
        mse_image = ag.mse(self.image_dec(latent).sigmoid(), X.images.reshape(n, -1))
        recon = mse_image + mse_text * self.cfg.text_weight
        return {FeatureTap.BIAE_LATENT: latent, "recon_loss": recon}

    def loss(self, X, y=None):
        return self.forward(X)["recon_loss"]


class ResidualFusionNet(Layer):
    """Text projection refined by two gated residual blocks driven by the image.

    Block k computes ``x_k = x_{k-1} + tanh(x_{k-1} W_t) * sigmoid(v W_v)``.
    """

    arch = "mrn"
    supervised = True

    def __init__(self, cfg, tables, rng, image_shape):
        super().__init__()
        table = tables[0]
        if table.shape[1] != cfg.embed_dim:
            raise ConfigError(f"embedding table has dim {table.shape[1]}, config declares {cfg.embed_dim}")
        self.cfg = cfg
        self.table = table
        d = cfg.fusion_dim
        self.text_lstm = self.add_child("text_lstm", LSTM(cfg.embed_dim, cfg.lstm_size, rng))
        self.text_proj = self.add_child("text_proj", Dense(cfg.lstm_size, d, rng))
        self.image_enc = self.add_child("image_enc", _ImageEncoder(image_shape, cfg, d, rng, activation=False))
        self.blocks = []
        for k in range(1, cfg.n_residual_blocks + 1):
            wt = self.add_child(f"block{k}_text", Dense(d, d, rng, bias=False))
            wv = self.add_child(f"block{k}_image", Dense(d, d, rng, bias=False))
            self.blocks.append((wt, wv))
        self.out = self.add_child("out", Dense(d, cfg.n_classes, rng))

    def forward(self, X):
        _check_images(X.images)
        t = self.text_proj(self.text_lstm(embed(self.table, X.token_ids), X.mask))
        v = self.image_enc(X.images)
        if t.shape != v.shape:
            raise ConfigError(f"text branch {t.shape} and image branch {v.shape} differ")
        x = t
        outs = {"x0": t}
        for tap, (wt, wv) in zip((FeatureTap.RB1, FeatureTap.RB2), self.blocks):
            x = x + wt(x).tanh() * wv(v).sigmoid()
            outs[tap] = x
        outs["logits"] = self.out(x)
        return outs

    def loss(self, X, y):
        return ag.softmax_cross_entropy(self.forward(X)["logits"], y)


def build_network(arch, cfg, tables, X, seed):
    """Construct an untrained network sized for inputs like ``X``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    if arch == "me":
        return MultiEmbeddingNet(cfg, tables, rng)
    if arch == "biae":
        return BimodalAutoencoderNet(cfg, tables, rng, X.seq_len, X.image_shape)
    if arch == "mrn":
        return ResidualFusionNet(cfg, tables, rng, X.image_shape)
    raise ConfigError(f"unknown architecture {arch!r}; expected one of {sorted(ARCH_TAPS)}")


def _batches(n, batch_size, rng=None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def evaluate_loss(net, X, y=None, batch_size=32):
    """Size-weighted mean loss over ``X`` without recording a tape."""
    total = 0.0
    with no_grad():
        for idx in _batches(len(X), batch_size):
            yb = None if y is None else y[idx]
            total += float(net.loss(X[idx], yb).data) * len(idx)
    return total / len(X)


def fit_network(net, train, val, cfg, validation_loss=None, on_epoch_end=None):
    """Mini-batch Adam with early stopping on validation loss.

    ``train`` and ``val`` are ``(MultimodalInput, labels)`` pairs. Training
    stops once ``cfg.patience`` consecutive epochs bring no strict
    improvement over the best validation loss; the best epoch's parameters
    are then restored. ``validation_loss(net, epoch)`` overrides the
    computed validation loss (used to script the stopping rule in tests).
    """
    cfg.validate()
    X_tr, y_tr = train
    X_va, y_va = val
    if len(X_tr) == 0 or len(X_va) == 0:
        raise ContractError("train and validation splits must be non-empty")
    if net.supervised and (y_tr is None or y_va is None):
        raise ContractError(f"{net.arch} trains on labels; none were given")
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    state = ag.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    log_ = TrainLog()
    best_loss, best_state, since_best = np.inf, net.state_dict(), 0

    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        for idx in _batches(len(X_tr), cfg.batch_size, rng):
            loss = net.loss(X_tr[idx], None if y_tr is None else y_tr[idx])
            total += float(loss.data) * len(idx)
            ag.backward(loss)
            ag.adam_step(params, state)
        train_loss = total / len(X_tr)
        if validation_loss is not None:
            val_loss = float(validation_loss(net, epoch))
        else:
            val_loss = evaluate_loss(net, X_va, y_va, cfg.batch_size)
        log_.train_loss.append(train_loss)
        log_.val_loss.append(val_loss)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if on_epoch_end is not None:
            on_epoch_end(net, epoch)

        if val_loss < best_loss:
            best_loss, best_state, since_best = val_loss, net.state_dict(), 0
            log_.best_epoch = epoch
        else:
            since_best += 1
        log_.stopped_epoch = epoch
        if since_best >= cfg.patience:
            break

    net.load_state_dict(best_state)
    return log_


def train(arch, train_split, val_split, model_config, train_config, tables):
    """Build and train one extractor; returns ``(network, TrainLog)``."""
    X_tr = train_split[0]
    net = build_network(arch, model_config, tables, X_tr, train_config.seed)
    if not net.supervised:
        train_split = (train_split[0], None)
        val_split = (val_split[0], None)
    return net, fit_network(net, train_split, val_split, train_config)


def extract_features(net, X, tap, labels=None, ids=None, batch_size=256):
    """Run ``net`` forward without a tape and collect the ``tap`` activations."""
    tap = FeatureTap(tap)
    if tap not in ARCH_TAPS[net.arch]:
        raise ContractError(f"tap {tap.value} is not available on a {net.arch} model")
    chunks = []
    with no_grad():
        for idx in _batches(len(X), batch_size):
            chunks.append(net.forward(X[idx])[tap].data)
    width = {FeatureTap.ME_AVG: net.cfg.lstm_size, FeatureTap.BIAE_LATENT: net.cfg.latent_dim}.get(
        tap, net.cfg.fusion_dim)
    values = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, width))
    if labels is None:
        labels = np.full(len(X), -1)
    if ids is None:
        ids = [str(i) for i in range(len(X))]
    return FeatureMatrix(values, np.asarray(labels), list(ids))


class MultimodalFeatureExtractor(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` trains an extractor, ``transform`` taps features.

    Parameters
    ----------
    arch : {"me", "biae", "mrn"}
    tap : FeatureTap or str, optional
        Defaults to the architecture's last tap (``me_avg``, ``biae_latent``, ``rb2``).
    tables : sequence of ndarray
        Frozen embedding matrices indexed by vocabulary id. The
        multi-embedding model uses two; the others use the first.
    model_config, train_config : ModelConfig, TrainConfig
    """

    def __init__(self, arch="mrn", tap=None, tables=(), model_config=None, train_config=None):
        self.arch = arch
        self.tap = tap
        self.tables = tables
        self.model_config = model_config
        self.train_config = train_config

    def _tap(self):
        if self.tap is None:
            return ARCH_TAPS[self.arch][-1]
        return FeatureTap(self.tap)

    def fit(self, X, y=None, eval_set=None):
        """Train on ``X`` with early stopping on ``eval_set=(X_val, y_val)``."""
        if self.arch not in ARCH_TAPS:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self._tap() not in ARCH_TAPS[self.arch]:
            raise ContractError(f"tap {self._tap().value} is not available on a {self.arch} model")
        if eval_set is None:
            raise ContractError("early stopping needs eval_set=(X_val, y_val)")
        mcfg = copy.deepcopy(self.model_config or ModelConfig())
        tcfg = copy.deepcopy(self.train_config or TrainConfig())
        y = None if y is None else np.asarray(y)
        y_val = None if eval_set[1] is None else np.asarray(eval_set[1])
        self.network_, self.train_log_ = train(
            self.arch, (X, y), (eval_set[0], y_val), mcfg, tcfg, [np.asarray(t) for t in self.tables])
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit() or load() before using the extractor")

    def transform(self, X):
        self._check_fitted()
        return extract_features(self.network_, X, self._tap()).values

    def extract(self, X, labels=None, ids=None):
        self._check_fitted()
        return extract_features(self.network_, X, self._tap(), labels, ids)

    def predict_proba(self, X):
        self._check_fitted()
        if not self.network_.supervised:
            raise ContractError("the autoencoder has no classification head")
        with no_grad():
            return np.concatenate(
                [ag.softmax(self.network_.forward(X[idx])["logits"]) for idx in _batches(len(X), 256)])

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def save(self, path):
        self._check_fitted()
        ag.save_checkpoint(path, dict(self.network_.named_parameters()))

    def load(self, path, X_like):
        """Rebuild the network for inputs shaped like ``X_like`` and load weights."""
        mcfg = copy.deepcopy(self.model_config or ModelConfig())
        self.network_ = build_network(self.arch, mcfg, [np.asarray(t) for t in self.tables], X_like, 0)
        try:
            self.network_.load_state_dict(ag.load_checkpoint(path))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"checkpoint does not match the configured model: {exc}") from None
        return self


def config_dict(cfg):
    return asdict(cfg)

"""
Small classifiers over token sequences, written against the flat parameter space.

Inputs are integer token arrays of shape (batch, max_len). Every trainable
array is one segment of the model's FlatParamSpace, and `forward` reads them
as differentiable views of a single flat parameter Tensor.
"""

import math

import numpy as np

from apps.diffs.space import FlatParamSpace
from apps.tensors import engine as E
from apps.tensors.engine import DTYPE

MLP = "mlp"
TRANSFORMER = "transformer"
ARCHITECTURES = (MLP, TRANSFORMER)


def _linear(theta, view, x, name):
    return E.add(E.matmul(x, view(theta, f"{name}.weight")), view(theta, f"{name}.bias"))


def _init(space, rng):
    """Scaled normal weights, zero biases."""
    theta = np.zeros(space.total_dim, dtype=DTYPE)
    for seg in space.segments:
        if seg.name.endswith(".bias"):
            continue
        fan_in = seg.shape[0]
        space.view(theta, seg.name)[...] = rng.normal(scale=1.0 / math.sqrt(fan_in), size=seg.shape)
    return theta


class TokenMLP:
    """Feed-forward classifier on the normalized token histogram of a sequence."""

    architecture = MLP

    def __init__(self, *, vocab_size, n_classes, depth=2, width=32):
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.depth = depth
        entries = []
        fan_in = vocab_size
        for i in range(depth):
            entries.append((f"hidden{i}.weight", (fan_in, width), i, False))
            entries.append((f"hidden{i}.bias", (width,), i, False))
            fan_in = width
        entries.append(("classifier.weight", (width, n_classes), depth, True))
        entries.append(("classifier.bias", (n_classes,), depth, True))
        self.space = FlatParamSpace.from_shapes(entries)

    def init_params(self, rng):
        return _init(self.space, rng)

    def features(self, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        counts = np.zeros((tokens.shape[0], self.vocab_size), dtype=DTYPE)
        np.add.at(counts, (np.arange(tokens.shape[0])[:, None], tokens), 1.0)
        return counts / DTYPE(tokens.shape[1])

    def forward(self, theta, tokens):
        view = self.space.tensor_view
        h = E.as_tensor(self.features(tokens))
        for i in range(self.depth):
            h = E.tanh(_linear(theta, view, h, f"hidden{i}"))
        return _linear(theta, view, h, "classifier")


class TinyTransformer:
    """Post-residual encoder without layer norm, mean-pooled into a tanh pooler.

    Each attention block keeps query, key, value and output projections as
    separate segments so they can be grouped and reported one by one.
    """

    architecture = TRANSFORMER

    def __init__(self, *, vocab_size, n_classes, layers=1, heads=2, d_model=16, max_len=8):
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.layers = layers
        self.heads = heads
        self.d_model = d_model
        self.max_len = max_len
        self.head_dim = d_model // heads
        d, ffn = d_model, 2 * d_model

        entries = [
            ("embed.tokens", (vocab_size, d), 0, False),
            ("embed.positions", (max_len, d), 0, False),
        ]
        for i in range(layers):
            layer = i + 1
            for proj in ("query", "key", "value", "output"):
                entries.append((f"layer{i}.{proj}.weight", (d, d), layer, False))
                entries.append((f"layer{i}.{proj}.bias", (d,), layer, False))
            entries.append((f"layer{i}.ffn_in.weight", (d, ffn), layer, False))
            entries.append((f"layer{i}.ffn_in.bias", (ffn,), layer, False))
            entries.append((f"layer{i}.ffn_out.weight", (ffn, d), layer, False))
            entries.append((f"layer{i}.ffn_out.bias", (d,), layer, False))
        entries.append(("pooler.weight", (d, d), layers + 1, False))
        entries.append(("pooler.bias", (d,), layers + 1, False))
        entries.append(("classifier.weight", (d, n_classes), layers + 2, True))
        entries.append(("classifier.bias", (n_classes,), layers + 2, True))
        self.space = FlatParamSpace.from_shapes(entries)

    def init_params(self, rng):
        return _init(self.space, rng)

    def _split_heads(self, x, batch, length):
        x = E.reshape(x, (batch, length, self.heads, self.head_dim))
        return E.transpose(x, (0, 2, 1, 3))

    def _attention(self, theta, view, x, i, batch, length):
        q = self._split_heads(_linear(theta, view, x, f"layer{i}.query"), batch, length)
        k = self._split_heads(_linear(theta, view, x, f"layer{i}.key"), batch, length)
        v = self._split_heads(_linear(theta, view, x, f"layer{i}.value"), batch, length)
        scores = E.stretch(E.matmul(q, E.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(self.head_dim))
        context = E.matmul(E.softmax(scores), v)
        context = E.reshape(E.transpose(context, (0, 2, 1, 3)), (batch * length, self.d_model))
        return _linear(theta, view, context, f"layer{i}.output")

    def forward(self, theta, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        batch, length = tokens.shape
        view = self.space.tensor_view

        x = E.take(view(theta, "embed.tokens"), tokens.reshape(-1))
        x = E.add(x, E.take(view(theta, "embed.positions"), np.tile(np.arange(length), batch)))
        for i in range(self.layers):
            x = E.add(x, self._attention(theta, view, x, i, batch, length))
            hidden = E.relu(_linear(theta, view, x, f"layer{i}.ffn_in"))
            x = E.add(x, _linear(theta, view, hidden, f"layer{i}.ffn_out"))

        pooled = E.stretch(E.reduce_sum(E.reshape(x, (batch, length, self.d_model)), axis=1), 1.0 / length)
        pooled = E.tanh(_linear(theta, view, pooled, "pooler"))
        return _linear(theta, view, pooled, "classifier")


def build_model(spec):
    """Model for a ModelSpec."""
    if spec.model == MLP:
        return TokenMLP(
            vocab_size=spec.vocab_size,
            n_classes=spec.n_classes,
            depth=spec.depth,
            width=spec.width,
        )
    return TinyTransformer(
        vocab_size=spec.vocab_size,
        n_classes=spec.n_classes,
        layers=spec.layers,
        heads=spec.heads,
        d_model=spec.d_model,
        max_len=spec.max_len,
    )

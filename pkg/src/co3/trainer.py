"""Synchronous parameter-server training simulator.

A from-scratch dense ReLU network is trained by SGD across U users. Each
round every user computes its local gradient, adds the decayed feedback
memory, quantizes to the low-bit floating-point grid, Huffman-encodes the
symbols, and "uplinks" the block; the server decodes every stream and applies
the descent step w <- w - (eta / U) * sum of decoded gradients, reducing in
ascending user order so runs are bitwise reproducible.

Distribution fits, exponent biases, and codebooks are refreshed once per
epoch (configurable to per-iteration) from the actual quantizer inputs
g + gamma * m of the epoch's first scheduled batches; the probe is a pure
measurement, so determinism is unaffected.

RNG discipline: weight init and sharding draw from streams keyed on the run
seed; user u's minibatch stream is keyed on seed XOR u. All streams are
disjoint SeedSequence children, so serial and parallel execution agree.
"""

import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import distmodel, entropy, feedback, fpq
from .datasets import shard_indices

LAYER_GROUPS = ("lower", "middle", "upper")


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


def layer_group(layer_idx, n_layers):
    """Thirds of the stack: input-side third is "lower", output-side "upper"."""
    bounds = np.array_split(np.arange(n_layers), 3)
    for name, idxs in zip(LAYER_GROUPS, bounds):
        if layer_idx in idxs:
            return name
    return LAYER_GROUPS[-1]


class Model:
    """Dense ReLU layers with a softmax head; parameters in full precision.

    Weights start uniform in +-1/sqrt(fan_in); biases start at zero. One
    "layer" for compression purposes is the concatenation of a weight matrix
    and its bias vector.
    """

    def __init__(self, layer_sizes, rng):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def param_count(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def layer_param_count(self, layer_idx):
        return self.weights[layer_idx].size + self.biases[layer_idx].size

    def forward(self, x):
        """Class probabilities; softmax rows sum to 1."""
        a = np.asarray(x, dtype=np.float64)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if not np.all(np.isfinite(z)):
                raise ValueError(f"non-finite activations in layer {i}")
            a = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
        shifted = a - a.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def loss_and_grads(self, x, y):
        """Mean cross-entropy over the batch and exact per-layer flat gradients."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        if y.size == 0:
            raise ValueError("empty batch")
        k = self.layer_sizes[-1]
        if y.min() < 0 or y.max() >= k:
            raise ValueError(f"label out of range [0, {k}): {int(y.max())}")
        acts = [x]
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if not np.all(np.isfinite(z)):
                raise ValueError(f"non-finite activations in layer {i}")
            a = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
            acts.append(a)
        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - logz
        n = y.size
        loss = float(-logp[np.arange(n), y].mean())
        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = [None] * self.n_layers
        for i in range(self.n_layers - 1, -1, -1):
            gw = acts[i].T @ delta
            gb = delta.sum(axis=0)
            grads[i] = np.concatenate((gw.ravel(), gb))
            if i > 0:
                delta = delta @ self.weights[i].T
                delta[acts[i] <= 0.0] = 0.0
        return loss, grads

    def sgd_step(self, layer_grads, scale):
        """w <- w - scale * g per layer, from flat gradient vectors."""
        for i, flat in enumerate(layer_grads):
            w = self.weights[i]
            step = scale * flat
            w -= step[: w.size].reshape(w.shape)
            self.biases[i] -= step[w.size :]

    def accuracy(self, x, y, batch=1024):
        hits = 0
        for i in range(0, len(y), batch):
            probs = self.forward(x[i : i + batch])
            hits += int(np.count_nonzero(probs.argmax(axis=1) == y[i : i + batch]))
        return hits / len(y)

    def dataset_loss(self, x, y, batch=1024):
        total = 0.0
        for i in range(0, len(y), batch):
            xb, yb = x[i : i + batch], y[i : i + batch]
            loss, _ = self.loss_and_grads(xb, yb)
            total += loss * len(yb)
        return total / len(y)


def epoch_batches(rng, n, batch_size):
    """Without-replacement minibatch index chunks for one epoch."""
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.01
    gamma: float = 0.9
    epochs: int = 30
    users: int = 1
    batch_size: int = 64
    fmt: fpq.FpFormat = fpq.FP4
    seed: int = 0
    quantizer: str = "fp"  # "fp" | "identity" (bypasses quantization and coding)
    bias_mode: str = "optimize"  # "optimize" | "polynomial" | "fixed"
    fixed_bias: float = 0.0
    rebuild: str = "epoch"  # fit/bias/codebook cadence: "epoch" | "iteration"
    include_headers: bool = True
    fit_sample_cap: int = 200_000
    hidden: tuple = (128, 64)
    shard_mode: str = "partition"  # "partition" | "replicate" (identical data + streams)
    track_history: bool = False
    keep_streams: bool = False
    keep_fit_samples: bool = False
    bias_search: fpq.BiasSearchConfig = field(default_factory=fpq.BiasSearchConfig)

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.users < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("users >= 1, epochs >= 0, batch_size >= 1 required")
        if self.quantizer not in ("fp", "identity"):
            raise ValueError(f"unknown quantizer {self.quantizer!r}")
        if self.bias_mode not in ("optimize", "polynomial", "fixed"):
            raise ValueError(f"unknown bias_mode {self.bias_mode!r}")
        if self.rebuild not in ("epoch", "iteration"):
            raise ValueError(f"unknown rebuild cadence {self.rebuild!r}")
        if self.shard_mode not in ("partition", "replicate"):
            raise ValueError(f"unknown shard_mode {self.shard_mode!r}")


@dataclass
class RunMetrics:
    """Everything a run produces besides the model itself."""

    config: TrainConfig
    param_count: int
    epoch_rows: list = field(default_factory=list)  # epoch, gamma, train_loss, test_acc, cum_bits
    fit_rows: list = field(default_factory=list)  # epoch, layer, family, beta, mu, scale, w2
    norm_rows: list = field(default_factory=list)  # epoch, group, l1_gradient, l1_memory
    round_losses: list = field(default_factory=list)
    ledger: entropy.PayloadLedger = field(default_factory=entropy.PayloadLedger)
    final_memory: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)
    streams: list = field(default_factory=list)
    fit_samples: dict = field(default_factory=dict)  # (epoch, layer) -> float64 array
    rounds: int = 0
    saturated: int = 0
    wall_time: float = 0.0

    @property
    def final_accuracy(self):
        return self.epoch_rows[-1][3]

    def total_bits(self, include_headers=None):
        if include_headers is None:
            include_headers = self.config.include_headers
        return self.ledger.total(include_headers)

    def bits_per_param_per_round(self, include_headers=None):
        denom = self.param_count * max(1, self.rounds) * self.config.users
        return self.total_bits(include_headers) / denom

    def write(self, outdir):
        """metrics.csv / fits.csv / norms.csv / summary.txt (+ fit samples)."""
        import csv

        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "gamma", "train_loss", "test_accuracy", "cum_bits"])
            for row in self.epoch_rows:
                w.writerow([row[0], row[1], repr(row[2]), repr(row[3]), row[4]])
        with open(out / "fits.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "layer", "family", "beta", "mu", "alpha_or_scale", "w2"])
            for row in self.fit_rows:
                w.writerow(row[:3] + tuple(repr(v) for v in row[3:]))
        with open(out / "norms.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "layer_group", "l1_gradient", "l1_memory"])
            for row in self.norm_rows:
                w.writerow(row)
        with open(out / "summary.txt", "w") as fh:
            for f in fields(self.config):
                fh.write(f"config.{f.name}: {getattr(self.config, f.name)}\n")
            fh.write(f"param_count: {self.param_count}\n")
            fh.write(f"rounds: {self.rounds}\n")
            fh.write(f"total_uplink_bits: {self.total_bits()}\n")
            fh.write(f"payload_bits: {self.ledger.payload_total}\n")
            fh.write(f"header_bits: {self.ledger.header_total}\n")
            fh.write(f"bits_per_param_per_round: {self.bits_per_param_per_round():.6f}\n")
            fh.write(f"final_test_accuracy: {self.final_accuracy:.6f}\n")
            fh.write(f"saturated_entries: {self.saturated}\n")
            fh.write(f"wall_time_s: {self.wall_time:.3f}\n")
        if self.fit_samples:
            sampledir = out / "samples"
            sampledir.mkdir(exist_ok=True)
            for (epoch, layer), arr in self.fit_samples.items():
                np.save(sampledir / f"epoch{epoch:04d}_layer{layer}.npy", arr)


_FALLBACK_ALPHA = 1e-8


def _subsample(values, cap):
    if values.size <= cap:
        return values
    idx = np.linspace(0, values.size - 1, cap).astype(np.int64)
    return values[idx]


def _fit_layer(samples, previous):
    """Three-family fit of the quantizer input; falls back on degenerate layers."""
    try:
        return distmodel.fit_all(samples), None
    except (distmodel.DegenerateSampleError, distmodel.InsufficientDataError) as exc:
        if previous is not None:
            return None, previous
        mean = float(np.mean(samples)) if samples.size else 0.0
        std = float(np.std(samples)) if samples.size else 0.0
        gn = distmodel.GenNormParams(2.0, mean, max(std, _FALLBACK_ALPHA) * math.sqrt(2.0))
        return None, gn


class _Codec:
    """Per-layer formats and codebooks, refreshed per the rebuild cadence."""

    def __init__(self, config):
        self.config = config
        self.formats = None
        self.codebooks = None
        self.gennorms = None

    def refresh(self, model, states, probe_grads, epoch, metrics):
        cfg = self.config
        formats, codebooks, gennorms = [], [], []
        for layer in range(model.n_layers):
            pooled = np.concatenate(
                [
                    feedback.corrected_input(states[(u, layer)], probe_grads[u][layer])
                    for u in range(cfg.users)
                ]
            )
            samples = _subsample(pooled, cfg.fit_sample_cap)
            reports, fallback = _fit_layer(samples, self.gennorms[layer] if self.gennorms else None)
            if reports is not None:
                gn = next(r for r in reports if r.family == "gennorm").as_gennorm()
                for r in reports:
                    metrics.fit_rows.append((epoch, layer, r.family, r.beta, r.mu, r.scale, r.w2))
                if cfg.keep_fit_samples:
                    metrics.fit_samples[(epoch, layer)] = samples
            else:
                gn = fallback
            if cfg.bias_mode == "optimize":
                b = fpq.optimize_bias(gn, cfg.fmt, cfg.bias_search)
            elif cfg.bias_mode == "polynomial":
                b = fpq.bias_polynomial(gn.beta, gn.sigma)
            else:
                b = cfg.fixed_bias
            # f32 so header-derived levels match encoder-side levels exactly
            fmt = cfg.fmt.with_bias(float(np.float32(b)))
            formats.append(fmt)
            codebooks.append(entropy.build_codebook(distmodel.cell_probabilities(gn, fmt)))
            gennorms.append(gn)
        self.formats, self.codebooks, self.gennorms = formats, codebooks, gennorms


def _probe_grads(model, dataset, shards, all_batches, config):
    """Gradients on each user's first scheduled batch; pure measurement."""
    grads = []
    for u in range(config.users):
        idx = shards[u][all_batches[u][0]]
        _, g = model.loss_and_grads(dataset.x_train[idx], dataset.y_train[idx])
        grads.append(g)
    return grads


def run_round(model, dataset, shards, batches, states, codec, ledger, config, t, metrics, norm_acc):
    """One synchronous PS round: gradients, EF, encode, uplink, decode, descent."""
    bypass = config.quantizer == "identity"
    totals = [np.zeros(model.layer_param_count(l)) for l in range(model.n_layers)]
    losses = []
    for u in range(config.users):
        idx = shards[u][batches[u]]
        loss_u, grads = model.loss_and_grads(dataset.x_train[idx], dataset.y_train[idx])
        losses.append(loss_u)
        for layer, g in enumerate(grads):
            state = states[(u, layer)]
            v = feedback.corrected_input(state, g)
            if bypass:
                g_hat = v
                decoded = v
            else:
                fmt = codec.formats[layer]
                cb = codec.codebooks[layer]
                q = fpq.quantize(v, fmt)
                metrics.saturated += fpq.count_saturated(v, fmt)
                block = entropy.encode(q, cb, user_id=u, iteration=t, layer_id=layer)
                ledger.record_block(block)
                if config.keep_streams:
                    metrics.streams.append(block.to_bytes())
                g_hat = fpq.dequantize(q)
                symbols = entropy.decode(block, cb)  # the PS-side inverse mapping
                decoded = fpq.dequantize(fpq.QuantizedTensor(symbols, fmt))
            feedback.update(state, g, g_hat)
            if config.track_history:
                metrics.history.setdefault((u, layer), []).append((g, g_hat))
            l1_g, l1_m = feedback.norms(state, g)
            norm_acc[layer][0] += l1_g
            norm_acc[layer][1] += l1_m
            norm_acc[layer][2] += 1
            totals[layer] += decoded
    loss_mean = float(np.mean(losses))
    if not math.isfinite(loss_mean):
        raise DivergenceError(f"training loss became non-finite at iteration {t}")
    model.sgd_step(totals, config.eta / config.users)
    return loss_mean


def train(config, dataset):
    """Run the full pipeline; deterministic given (config, dataset)."""
    t_start = time.perf_counter()
    init_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    model = Model([dataset.n_features, *config.hidden, dataset.n_classes], init_rng)
    metrics = RunMetrics(config=config, param_count=model.param_count)

    n_train = len(dataset.y_train)
    shard_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
    if config.shard_mode == "partition":
        shards = shard_indices(n_train, config.users, shard_rng)
        data_rngs = [
            np.random.default_rng(np.random.SeedSequence([config.seed ^ u, 1]))
            for u in range(config.users)
        ]
    else:
        shards = [np.arange(n_train) for _ in range(config.users)]
        data_rngs = [
            np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
            for _ in range(config.users)
        ]

    states = {
        (u, layer): feedback.init_state(model.layer_param_count(layer), config.gamma)
        for u in range(config.users)
        for layer in range(model.n_layers)
    }
    codec = _Codec(config)
    bypass = config.quantizer == "identity"

    metrics.epoch_rows.append(
        (
            0,
            config.gamma,
            model.dataset_loss(dataset.x_train, dataset.y_train),
            model.accuracy(dataset.x_test, dataset.y_test),
            0,
        )
    )

    t = 0
    for epoch in range(1, config.epochs + 1):
        all_batches = [
            epoch_batches(data_rngs[u], shards[u].size, config.batch_size)
            for u in range(config.users)
        ]
        rounds = min(len(b) for b in all_batches)
        if not bypass and config.rebuild == "epoch":
            codec.refresh(
                model, states, _probe_grads(model, dataset, shards, all_batches, config), epoch, metrics
            )
        norm_acc = [[0.0, 0.0, 0] for _ in range(model.n_layers)]
        epoch_losses = []
        for r in range(rounds):
            if not bypass and config.rebuild == "iteration":
                probe = [
                    [
                        model.loss_and_grads(
                            dataset.x_train[shards[u][all_batches[u][r]]],
                            dataset.y_train[shards[u][all_batches[u][r]]],
                        )[1][layer]
                        for layer in range(model.n_layers)
                    ]
                    for u in range(config.users)
                ]
                codec.refresh(model, states, probe, epoch, metrics)
            batches = [all_batches[u][r] for u in range(config.users)]
            loss = run_round(
                model, dataset, shards, batches, states, codec, metrics.ledger, config, t, metrics, norm_acc
            )
            epoch_losses.append(loss)
            metrics.round_losses.append(loss)
            t += 1
        metrics.rounds = t
        group_acc = {}
        for layer in range(model.n_layers):
            g_sum, m_sum, count = norm_acc[layer]
            group = layer_group(layer, model.n_layers)
            acc = group_acc.setdefault(group, [0.0, 0.0, 0])
            acc[0] += g_sum
            acc[1] += m_sum
            acc[2] += count
        for group in LAYER_GROUPS:
            if group in group_acc:
                g_sum, m_sum, count = group_acc[group]
                metrics.norm_rows.append((epoch, group, g_sum / count, m_sum / count))
        metrics.epoch_rows.append(
            (
                epoch,
                config.gamma,
                float(np.mean(epoch_losses)),
                model.accuracy(dataset.x_test, dataset.y_test),
                metrics.ledger.total(config.include_headers),
            )
        )

    for key, state in states.items():
        metrics.final_memory[key] = state.memory
    metrics.wall_time = time.perf_counter() - t_start
    return metrics, model

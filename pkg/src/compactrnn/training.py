"""Truncated-BPTT cross-entropy training with synchronous minibatch SGD.

Each optimisation step processes one ``unroll``-frame window from each of
``batch_size`` streams. A stream walks its utterances window by window,
carrying the recurrent state forward (gradients stop at the window edge)
and resetting it to zero when a new utterance starts. Within a window the
target of frame t is the label of frame t - label_delay; the first
``label_delay`` frames of every window are not scored.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import SplitMix64, mix64
from .recurrent_nets import NonFiniteActivation, build_network
from .tasks import IGNORE

METRICS_HEADER = ["step", "frames_seen", "lr", "train_ce", "heldout_frame_acc"]


class DivergenceError(RuntimeError):
    def __init__(self, step, message="non-finite loss"):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step


@dataclass
class TrainMetrics:
    step: int
    frames_seen: int
    lr: float
    train_ce: float
    heldout_frame_acc: float

    def row(self):
        return [self.step, self.frames_seen, repr(self.lr), repr(self.train_ce),
                repr(self.heldout_frame_acc)]


@dataclass
class BpttResult:
    loss: float
    grads: dict
    states: list
    scored: int
    correct: int


def lr_at(config, frames_seen):
    """lr0 * decay_factor ** (frames_seen / decay_horizon)."""
    if frames_seen < 0:
        raise ValueError("frames_seen must be non-negative")
    return config.lr0 * config.decay_factor ** (frames_seen / config.decay_horizon)


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradient_norm(grads, threshold):
    """Rescale so the global L2 norm is at most ``threshold``; returns (grads, norm)."""
    if threshold <= 0:
        raise ValueError("clip threshold must be positive")
    norm = global_norm(grads)
    if norm <= threshold:
        return grads, norm
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}, norm


def sgd_step(params, grads, lr):
    """In-place ``p -= lr * g`` for every parameter array; returns ``params``."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        p -= lr * g
    return params


def delayed_targets(labels, label_delay):
    """Window targets: label of frame t - delay; the first ``delay`` frames are IGNORE."""
    labels = np.asarray(labels)
    targets = np.full_like(labels, IGNORE)
    targets[label_delay:] = labels[:labels.shape[0] - label_delay]
    return targets


def _cross_entropy(log_probs, targets):
    """(loss mean over scored frames, d loss / d logits, scored count, correct count)."""
    mask = targets >= 0
    scored = int(mask.sum())
    d_logits = np.zeros_like(log_probs)
    if scored == 0:
        return 0.0, d_logits, 0, 0
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(log_probs, safe[..., None], axis=-1)[..., 0]
    loss = float(-(picked * mask).sum() / scored)
    d_logits = np.exp(log_probs)
    np.put_along_axis(d_logits, safe[..., None],
                      np.take_along_axis(d_logits, safe[..., None], axis=-1) - 1.0, axis=-1)
    d_logits *= (mask / scored)[..., None]
    correct = int(((log_probs.argmax(axis=-1) == targets) & mask).sum())
    return loss, d_logits, scored, correct


def truncated_bptt(network, frames, labels, config, states=None):
    """Loss and gradients over the first ``config.unroll`` frames.

    ``frames`` is (T, B, D) or (T, D) and ``labels`` (T, B) or (T,), with
    T >= unroll; later frames are ignored. ``states`` are carried in as
    constants. Raises DivergenceError on a non-finite loss.
    """
    frames = np.asarray(frames, dtype=np.float64)
    labels = np.asarray(labels)
    if frames.ndim == 2:
        frames, labels = frames[:, None], labels[:, None]
    if frames.shape[0] < config.unroll:
        raise ValueError(f"batch has {frames.shape[0]} frames, unroll is {config.unroll}")
    frames, labels = frames[:config.unroll], labels[:config.unroll]
    try:
        log_probs, new_states, tape = network.forward(frames, states)
    except NonFiniteActivation as err:
        raise DivergenceError(-1, str(err)) from None
    targets = delayed_targets(labels, config.label_delay)
    loss, d_logits, scored, correct = _cross_entropy(log_probs, targets)
    if not math.isfinite(loss):
        raise DivergenceError(-1)
    grads = network.backward(tape, d_logits)
    return BpttResult(loss, grads, new_states, scored, correct)


def _pad_batch(utterances):
    T = max(len(u) for u in utterances)
    dim = utterances[0].features.shape[1]
    frames = np.zeros((T, len(utterances), dim))
    labels = np.full((T, len(utterances)), IGNORE, dtype=np.int64)
    for b, u in enumerate(utterances):
        frames[:len(u), b] = u.features
        labels[:len(u), b] = u.labels
    return frames, labels


def evaluate(network, utterances, label_delay, batch_size=64):
    """(mean cross-entropy, frame accuracy) over whole utterances from a zero state.

    Targets are delayed by ``label_delay`` from the start of each utterance.
    """
    if not utterances:
        raise ValueError("evaluation set is empty")
    total_loss = 0.0
    scored = correct = 0
    for start in range(0, len(utterances), batch_size):
        frames, labels = _pad_batch(utterances[start:start + batch_size])
        log_probs, _, _ = network.forward(frames)
        loss, _, n, c = _cross_entropy(log_probs, delayed_targets(labels, label_delay))
        total_loss += loss * n
        scored += n
        correct += c
    if scored == 0:
        return 0.0, 0.0
    return total_loss / scored, correct / scored


def frame_accuracy(network, utterances, label_delay=0):
    return evaluate(network, utterances, label_delay)[1]


class WindowStream:
    """``batch_size`` parallel streams of fixed-length windows over utterances.

    In epoch e, stream b visits ``perm_e[b::batch_size]`` where ``perm_e``
    is a seeded permutation of the utterances. The last window of an
    utterance is zero-padded with IGNORE labels.
    """

    def __init__(self, utterances, batch_size, unroll, seed):
        if len(utterances) < batch_size:
            raise ValueError(f"{len(utterances)} utterances cannot feed {batch_size} streams")
        self.utterances = utterances
        self.batch_size = batch_size
        self.unroll = unroll
        self.seed = seed
        self.dim = utterances[0].features.shape[1]
        # per stream: [epoch, position within the stream's utterance list, window index]
        self.positions = [[0, 0, 0] for _ in range(batch_size)]
        self._orders = {}

    def _order(self, epoch):
        if epoch not in self._orders:
            self._orders = {epoch: SplitMix64(mix64(self.seed, epoch)).permutation(len(self.utterances))}
        return self._orders[epoch]

    def _stream_utterances(self, b, epoch):
        return self._order(epoch)[b::self.batch_size]

    def next(self):
        """(frames (unroll, B, D), labels (unroll, B), reset mask (B,))."""
        frames = np.zeros((self.unroll, self.batch_size, self.dim))
        labels = np.full((self.unroll, self.batch_size), IGNORE, dtype=np.int64)
        reset = np.zeros(self.batch_size, dtype=bool)
        for b, pos in enumerate(self.positions):
            epoch, idx, win = pos
            utt = self.utterances[self._stream_utterances(b, epoch)[idx]]
            start = win * self.unroll
            chunk = slice(start, min(start + self.unroll, len(utt)))
            n = chunk.stop - chunk.start
            frames[:n, b] = utt.features[chunk]
            labels[:n, b] = utt.labels[chunk]
            reset[b] = win == 0
            if chunk.stop >= len(utt):
                idx += 1
                win = 0
                if idx >= len(self._stream_utterances(b, epoch)):
                    epoch, idx = epoch + 1, 0
            else:
                win += 1
            self.positions[b] = [epoch, idx, win]
        return frames, labels, reset


def reset_states(states, mask):
    """Zero the rows of every layer state where ``mask`` is set."""
    keep = (~mask).astype(np.float64)[:, None]
    for state in states:
        state.hidden = state.hidden * keep
        if state.cell is not None:
            state.cell = state.cell * keep
        if state.up is not None:
            state.up = state.up * keep
    return states


class Trainer:
    """Owns the network, data streams and carried state of one training run."""

    def __init__(self, config, split, network=None):
        self.config = config
        self.train_config = config.train
        self.split = split
        self.rng = SplitMix64(config.train.seed)
        if network is None:
            network = build_network(config.network, self.rng, config.train.cell_clip)
        self.network = network
        tc = self.train_config
        self.stream = WindowStream(split.train, tc.batch_size, tc.unroll, mix64(tc.seed, 0xDA7A))
        self.states = network.initial_states(tc.batch_size)
        self.step = 0
        self.frames_seen = 0
        # Fixed training subset for the logged training cross-entropy.
        self.train_probe = split.train[:min(len(split.train), 32)]

    def train_step(self):
        tc = self.train_config
        lr = lr_at(tc, self.frames_seen)
        frames, labels, reset = self.stream.next()
        reset_states(self.states, reset)
        try:
            result = truncated_bptt(self.network, frames, labels, tc, self.states)
        except DivergenceError:
            raise DivergenceError(self.step + 1) from None
        grads = result.grads
        if tc.grad_clip_norm is not None:
            grads, _ = clip_gradient_norm(grads, tc.grad_clip_norm)
        sgd_step(self.network.parameters(), grads, lr)
        self.states = result.states
        self.step += 1
        self.frames_seen += tc.unroll * tc.batch_size
        return result.loss

    def metrics(self):
        tc = self.train_config
        train_ce, _ = evaluate(self.network, self.train_probe, tc.label_delay)
        _, acc = evaluate(self.network, self.split.heldout, tc.label_delay) if self.split.heldout else (0.0, 0.0)
        return TrainMetrics(self.step, self.frames_seen, lr_at(tc, self.frames_seen), train_ce, acc)

    def run(self, max_steps=None, metrics_path=None, on_eval=None, stop_when=None):
        """Train until ``max_steps`` (default from config); returns the list of metrics.

        ``stop_when(metrics)`` may end the run early at an evaluation point.
        """
        max_steps = self.train_config.max_steps if max_steps is None else max_steps
        writer = MetricsWriter(metrics_path) if metrics_path else None
        history = [self.metrics()]
        # A resumed run already logged this row before its checkpoint was taken.
        if writer and self.step == 0:
            writer.write(history[-1])
        while self.step < max_steps:
            self.train_step()
            if self.step % self.train_config.eval_interval == 0 or self.step == max_steps:
                history.append(self.metrics())
                if writer:
                    writer.write(history[-1])
                if on_eval:
                    on_eval(self)
                if stop_when and stop_when(history[-1]):
                    break
        return history


class MetricsWriter:
    """Append-only CSV; the header is written once for a new file."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(METRICS_HEADER)

    def write(self, metrics):
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow(metrics.row())


def read_metrics(path):
    with Path(path).open(newline="") as fh:
        return [TrainMetrics(int(r["step"]), int(r["frames_seen"]), float(r["lr"]),
                             float(r["train_ce"]), float(r["heldout_frame_acc"]))
                for r in csv.DictReader(fh)]

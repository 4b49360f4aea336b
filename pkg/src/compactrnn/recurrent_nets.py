"""RNN and LSTM layers whose weight matrices are arbitrary LinearMaps.

Shapes are batch-major: states are ``(B, dim)`` and a sequence of frames
is ``(T, B, feature_dim)``. Every step function returns the new state plus
a cache consumed by the matching ``*_backward`` function.

Projection layers (``projection_map``) shrink the layer output before it
recurs and feeds upward. By default one projection serves both paths (tied);
``projection_up_map`` installs a separate copy for the upward path, which is
how tied gradients are checked against untied copies.
"""

import copy
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import linear_maps
from .config import GATES, ConfigError, matrix_name

PEEPHOLE_GATES = ("i", "f", "o")


def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def log_softmax(logits):
    # Non-finite logits propagate as NaN and are reported by the caller.
    with np.errstate(invalid="ignore", over="ignore"):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class LayerState:
    hidden: np.ndarray
    cell: Optional[np.ndarray] = None
    # Upward output when the projection is untied; otherwise ``hidden``.
    up: Optional[np.ndarray] = None

    @property
    def output(self):
        return self.hidden if self.up is None else self.up


@dataclass
class RnnLayer:
    input_map: linear_maps.LinearMap
    recurrent_map: linear_maps.LinearMap
    bias: np.ndarray
    projection_map: Optional[linear_maps.LinearMap] = None
    projection_up_map: Optional[linear_maps.LinearMap] = None

    kind = "rnn"

    def __post_init__(self):
        hidden = self.bias.shape[0]
        if self.input_map.rows != hidden or self.recurrent_map.rows != hidden:
            raise ValueError("rnn input/recurrent maps must have one row per hidden unit")
        if self.recurrent_map.cols != self.state_dim:
            raise ValueError(f"recurrent map takes {self.recurrent_map.cols} inputs, "
                             f"state has {self.state_dim}")

    @property
    def hidden_dim(self):
        return self.bias.shape[0]

    @property
    def state_dim(self):
        return self.hidden_dim if self.projection_map is None else self.projection_map.rows

    @property
    def input_dim(self):
        return self.input_map.cols

    def maps(self):
        out = {"W": self.input_map, "U": self.recurrent_map}
        if self.projection_map is not None:
            out["P"] = self.projection_map
        if self.projection_up_map is not None:
            out["P_up"] = self.projection_up_map
        return out

    def vectors(self):
        return {"b": self.bias}

    def initial_state(self, batch):
        return LayerState(np.zeros((batch, self.state_dim)))


@dataclass
class LstmLayer:
    input_maps: dict          # gate -> LinearMap, gates i, f, c, o
    recurrent_maps: dict
    biases: dict
    peepholes: dict           # gate -> vector, gates i, f, o
    projection_map: Optional[linear_maps.LinearMap] = None
    projection_up_map: Optional[linear_maps.LinearMap] = None

    kind = "lstm"

    def __post_init__(self):
        cell = self.cell_dim
        for gate in GATES:
            if self.input_maps[gate].rows != cell or self.recurrent_maps[gate].rows != cell:
                raise ValueError(f"gate {gate} maps must have {cell} rows")
            if self.recurrent_maps[gate].cols != self.state_dim:
                raise ValueError(f"U_{gate} takes {self.recurrent_maps[gate].cols} inputs, "
                                 f"state has {self.state_dim}")
            if self.biases[gate].shape != (cell,):
                raise ValueError(f"b_{gate} must have length {cell}")
        for gate in PEEPHOLE_GATES:
            if self.peepholes[gate].shape != (cell,):
                raise ValueError(f"v_{gate} must have length {cell}")

    @property
    def cell_dim(self):
        return self.biases["i"].shape[0]

    @property
    def state_dim(self):
        return self.cell_dim if self.projection_map is None else self.projection_map.rows

    @property
    def input_dim(self):
        return self.input_maps["i"].cols

    def maps(self):
        out = {f"W_{g}": self.input_maps[g] for g in GATES}
        out.update({f"U_{g}": self.recurrent_maps[g] for g in GATES})
        if self.projection_map is not None:
            out["P"] = self.projection_map
        if self.projection_up_map is not None:
            out["P_up"] = self.projection_up_map
        return out

    def vectors(self):
        out = {f"b_{g}": self.biases[g] for g in GATES}
        out.update({f"v_{g}": self.peepholes[g] for g in PEEPHOLE_GATES})
        return out

    def initial_state(self, batch):
        return LayerState(np.zeros((batch, self.state_dim)), np.zeros((batch, self.cell_dim)))


@dataclass
class OutputLayer:
    weight: linear_maps.LinearMap
    bias: np.ndarray

    @property
    def num_classes(self):
        return self.bias.shape[0]

    def maps(self):
        return {"W": self.weight}

    def vectors(self):
        return {"b": self.bias}


def _project(layer, pre):
    """Apply the layer's projection(s) to ``pre``; returns (hidden, up)."""
    if layer.projection_map is None:
        return pre, None
    hidden = layer.projection_map.apply(pre)
    up = None if layer.projection_up_map is None else layer.projection_up_map.apply(pre)
    return hidden, up


def rnn_step_forward(layer, below, prev):
    a = layer.input_map.apply(below) + layer.recurrent_map.apply(prev.hidden) + layer.bias
    h = sigmoid(a)
    hidden, up = _project(layer, h)
    state = LayerState(hidden, up=up)
    return state, {"below": below, "prev": prev.hidden, "h": h}


def rnn_step(layer, below, prev):
    """One RNN step: h = sigmoid(W below + U prev + b), optionally projected."""
    return rnn_step_forward(layer, below, prev)[0]


def clip_cell(c, limit):
    """Clamp the cell state elementwise to [-limit, limit]."""
    if limit is None:
        return c
    if limit <= 0:
        raise ValueError("cell clip limit must be positive")
    return np.clip(c, -limit, limit)


def lstm_step_forward(layer, below, prev, cell_clip=None):
    W, U, b, v = layer.input_maps, layer.recurrent_maps, layer.biases, layer.peepholes
    from_below = linear_maps.apply_group([W[g] for g in GATES], below)
    from_prev = linear_maps.apply_group([U[g] for g in GATES], prev.hidden)
    pre = {g: wx + uh + b[g] for g, wx, uh in zip(GATES, from_below, from_prev)}
    i = sigmoid(pre["i"] + v["i"] * prev.cell)
    f = sigmoid(pre["f"] + v["f"] * prev.cell)
    g = np.tanh(pre["c"])
    c_raw = f * prev.cell + i * g
    c = clip_cell(c_raw, cell_clip)
    # The output gate peeks at the new cell state.
    o = sigmoid(pre["o"] + v["o"] * c)
    tc = np.tanh(c)
    m = o * tc
    hidden, up = _project(layer, m)
    cache = {"below": below, "prev_h": prev.hidden, "prev_c": prev.cell,
             "i": i, "f": f, "g": g, "o": o, "c": c, "tc": tc, "m": m,
             "unclipped": None if cell_clip is None else np.abs(c_raw) <= cell_clip}
    return LayerState(hidden, c, up), cache


def lstm_step(layer, below, prev, cell_clip=None):
    """One peephole LSTM step (forget gate, peepholes on i/f/o, optional projection)."""
    return lstm_step_forward(layer, below, prev, cell_clip)[0]


class _Tape:
    """Per-map (input, upstream) pairs, reduced into parameter gradients at the end."""

    def __init__(self):
        self.pairs = {}

    def record(self, name, lmap, x, upstream):
        entry = self.pairs.setdefault(name, (lmap, [], []))
        entry[1].append(x)
        entry[2].append(upstream)

    def reduce(self, grads):
        for name, (lmap, xs, ups) in self.pairs.items():
            result = lmap.backward(np.concatenate(xs), np.concatenate(ups))
            for key, value in result.grad_params.items():
                _accumulate(grads, f"{name}/{key}", value)


def _accumulate(grads, key, value):
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


def _project_backward(layer, prefix, pre, d_hidden, d_up, tape):
    """Gradient w.r.t. the pre-projection activation."""
    if layer.projection_map is None:
        return d_hidden + d_up
    if layer.projection_up_map is None:
        d = d_hidden + d_up
        tape.record(f"{prefix}.P", layer.projection_map, pre, d)
        return layer.projection_map.apply_transpose(d)
    tape.record(f"{prefix}.P", layer.projection_map, pre, d_hidden)
    tape.record(f"{prefix}.P_up", layer.projection_up_map, pre, d_up)
    return layer.projection_map.apply_transpose(d_hidden) + layer.projection_up_map.apply_transpose(d_up)


def rnn_step_backward(layer, prefix, cache, d_hidden, d_up, d_cell, tape, grads):
    """Returns (d_below, d_prev_hidden, d_prev_cell)."""
    h = cache["h"]
    dh = _project_backward(layer, prefix, h, d_hidden, d_up, tape)
    da = dh * h * (1.0 - h)
    tape.record(f"{prefix}.W", layer.input_map, cache["below"], da)
    tape.record(f"{prefix}.U", layer.recurrent_map, cache["prev"], da)
    _accumulate(grads, f"{prefix}.b", da.sum(axis=0))
    return layer.input_map.apply_transpose(da), layer.recurrent_map.apply_transpose(da), None


def lstm_step_backward(layer, prefix, cache, d_hidden, d_up, d_cell, tape, grads):
    """Returns (d_below, d_prev_hidden, d_prev_cell)."""
    v = layer.peepholes
    i, f, g, o, c, tc = (cache[k] for k in ("i", "f", "g", "o", "c", "tc"))
    prev_c = cache["prev_c"]
    dm = _project_backward(layer, prefix, cache["m"], d_hidden, d_up, tape)
    d_pre = {"o": dm * tc * o * (1.0 - o)}
    dc = d_cell + dm * o * (1.0 - tc * tc) + d_pre["o"] * v["o"]
    if cache["unclipped"] is not None:
        dc = dc * cache["unclipped"]
    d_pre["i"] = dc * g * i * (1.0 - i)
    d_pre["f"] = dc * prev_c * f * (1.0 - f)
    d_pre["c"] = dc * i * (1.0 - g * g)
    d_prev_c = dc * f + d_pre["i"] * v["i"] + d_pre["f"] * v["f"]
    _accumulate(grads, f"{prefix}.v_i", (d_pre["i"] * prev_c).sum(axis=0))
    _accumulate(grads, f"{prefix}.v_f", (d_pre["f"] * prev_c).sum(axis=0))
    _accumulate(grads, f"{prefix}.v_o", (d_pre["o"] * c).sum(axis=0))

    for gate in GATES:
        dg = d_pre[gate]
        tape.record(f"{prefix}.W_{gate}", layer.input_maps[gate], cache["below"], dg)
        tape.record(f"{prefix}.U_{gate}", layer.recurrent_maps[gate], cache["prev_h"], dg)
        _accumulate(grads, f"{prefix}.b_{gate}", dg.sum(axis=0))
    ups = [d_pre[gate] for gate in GATES]
    d_below = linear_maps.apply_transpose_group([layer.input_maps[g] for g in GATES], ups)
    d_prev_h = linear_maps.apply_transpose_group([layer.recurrent_maps[g] for g in GATES], ups)
    return d_below, d_prev_h, d_prev_c


class NonFiniteActivation(FloatingPointError):
    """Raised when a forward pass produces NaN or infinity."""


@dataclass
class ForwardTape:
    caches: list            # [t][layer] -> cache
    top_outputs: list       # [t] -> input of the output layer
    log_probs: np.ndarray


@dataclass
class Network:
    layers: List[object]
    output: OutputLayer
    cell_clip: Optional[float] = None
    names: dict = field(default_factory=dict)   # display names, e.g. layer1.W_i -> W_i^1

    @property
    def input_dim(self):
        return self.layers[0].input_dim

    @property
    def num_classes(self):
        return self.output.num_classes

    def initial_states(self, batch):
        return [layer.initial_state(batch) for layer in self.layers]

    def named_blocks(self):
        """Ordered (prefix.name, LinearMap or vector) for every parameter block."""
        blocks = []
        for idx, layer in enumerate(self.layers, start=1):
            prefix = f"layer{idx}"
            blocks += [(f"{prefix}.{k}", m) for k, m in layer.maps().items()]
            blocks += [(f"{prefix}.{k}", v) for k, v in layer.vectors().items()]
        blocks += [(f"output.{k}", m) for k, m in self.output.maps().items()]
        blocks += [(f"output.{k}", v) for k, v in self.output.vectors().items()]
        return blocks

    def parameters(self):
        """Ordered {name: array}; maps contribute one entry per parameter array."""
        out = {}
        for name, block in self.named_blocks():
            if isinstance(block, linear_maps.LinearMap):
                for key, arr in block.params.items():
                    out[f"{name}/{key}"] = arr
            else:
                out[name] = block
        return out

    def param_count(self):
        return int(sum(p.size for p in self.parameters().values()))

    def step(self, below, states):
        new_states, caches = [], []
        for layer, prev in zip(self.layers, states):
            if layer.kind == "lstm":
                state, cache = lstm_step_forward(layer, below, prev, self.cell_clip)
            else:
                state, cache = rnn_step_forward(layer, below, prev)
            new_states.append(state)
            caches.append(cache)
            below = state.output
        return new_states, caches, below

    def forward(self, frames, states=None):
        """Run all frames; returns (log_probs (T, B, K), final states, tape)."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim == 2:
            frames = frames[:, None, :]
        if frames.shape[-1] != self.input_dim:
            raise ValueError(f"frames have {frames.shape[-1]} features, network expects {self.input_dim}")
        if states is None:
            states = self.initial_states(frames.shape[1])
        all_caches, tops = [], []
        for x in frames:
            states, caches, top = self.step(x, states)
            all_caches.append(caches)
            tops.append(top)
        top = np.stack(tops)
        T, B = top.shape[:2]
        logits = self.output.weight.apply(top.reshape(T * B, -1)).reshape(T, B, -1) + self.output.bias
        log_probs = log_softmax(logits)
        if not np.all(np.isfinite(log_probs)):
            raise NonFiniteActivation("non-finite activation in forward pass")
        return log_probs, states, ForwardTape(all_caches, tops, log_probs)

    def backward(self, tape, d_logits):
        """Parameter gradients given d loss / d logits of shape (T, B, K).

        Carried-in states are treated as constants (truncated BPTT).
        """
        grads = {}
        maps = _Tape()
        T = len(tape.caches)
        tops = np.stack(tape.top_outputs)
        B = tops.shape[1]
        maps.record("output.W", self.output.weight, tops.reshape(T * B, -1), d_logits.reshape(T * B, -1))
        _accumulate(grads, "output.b", d_logits.sum(axis=(0, 1)))
        d_tops = self.output.weight.apply_transpose(d_logits.reshape(T * B, -1)).reshape(T, B, -1)

        carry_h = [np.zeros((B, layer.state_dim)) for layer in self.layers]
        carry_c = [np.zeros((B, layer.cell_dim)) if layer.kind == "lstm" else None
                   for layer in self.layers]
        for t in range(T - 1, -1, -1):
            d_up = d_tops[t]
            for idx in range(len(self.layers) - 1, -1, -1):
                layer = self.layers[idx]
                backward = lstm_step_backward if layer.kind == "lstm" else rnn_step_backward
                d_below, carry_h[idx], carry_c[idx] = backward(
                    layer, f"layer{idx + 1}", tape.caches[t][idx],
                    carry_h[idx], d_up, carry_c[idx], maps, grads)
                d_up = d_below
        maps.reduce(grads)
        params = self.parameters()
        return {name: grads.get(name, np.zeros_like(p)) for name, p in params.items()}


def network_forward(network, frames, states=None):
    """(log-probabilities per frame, new states)."""
    log_probs, states, _ = network.forward(frames, states)
    return log_probs, states


def untie_projections(network):
    """Copy of ``network`` where each projection gets a separate upward copy."""
    clone = copy.deepcopy(network)
    for layer in clone.layers:
        if layer.projection_map is not None and layer.projection_up_map is None:
            layer.projection_up_map = layer.projection_map.copy()
    return clone


def _removed_projections(config):
    """Layers (1-based) whose projection is dropped because both neighbours are Toeplitz-like."""
    removed = set()
    if config.projection_removal != "auto":
        return removed
    layers = config.layers
    for l in range(2, len(layers) + 1):
        below = layers[l - 2]
        if below.type != "lstm" or layers[l - 1].type != "lstm" or below.projection is None:
            continue
        u_toep = all(config.assignment("U", l - 1, g)[0] == "toeplitz" for g in GATES)
        w_toep = all(config.assignment("W", l, g)[0] == "toeplitz" for g in GATES)
        if u_toep and w_toep:
            if below.projection_required:
                raise ConfigError(
                    f"projection P^{l - 1} is required but U^{l - 1} and W^{l} are both "
                    f"toeplitz-compressed in every gate, which removes it")
            removed.add(l - 1)
    return removed


def layer_dims(config):
    """Per layer: (hidden, projection or None, exported state dim, input dim)."""
    removed = _removed_projections(config)
    dims = []
    below = config.input_dim
    for idx, lc in enumerate(config.layers, start=1):
        proj = None if idx in removed else lc.projection
        state = lc.hidden if proj is None else proj
        dims.append((lc.hidden, proj, state, below))
        below = state
    return dims


def map_plan(config):
    """Ordered (block name, display name, kind, rows, cols, rank) for every matrix."""
    plan = []
    for idx, (lc, (hidden, proj, state, below)) in enumerate(zip(config.layers, layer_dims(config)), 1):
        prefix = f"layer{idx}"
        gates = GATES if lc.type == "lstm" else ("x",)
        for matrix, cols in (("W", below), ("U", state)):
            for gate in gates:
                kind, rank = config.assignment(matrix, idx, gate)
                suffix = "" if gate == "x" else f"_{gate}"
                plan.append((f"{prefix}.{matrix}{suffix}", matrix_name(matrix, idx, gate),
                             kind, hidden, cols, rank))
        if proj is not None:
            plan.append((f"{prefix}.P", f"P^{idx}", "dense", proj, hidden, None))
    top = layer_dims(config)[-1][2]
    plan.append(("output.W", f"W^{len(config.layers) + 1}", "dense", config.num_classes, top, None))
    return plan


def build_network(config, rng, cell_clip=None):
    """Instantiate every matrix as its configured LinearMap kind.

    ``config`` is a NetworkConfig; ``rng`` a numerics.SplitMix64. Biases start
    at zero; weights, peepholes and generators draw from the init range.
    """
    if config.input_dim is None or config.num_classes is None:
        raise ValueError("network config needs input_dim and num_classes")
    r = config.init_range
    names = {}

    def make(block, display, kind, rows, cols, rank):
        names[block] = display
        return linear_maps.make_map(kind, rng, rows, cols, rank, r)

    plan = {row[0]: row for row in map_plan(config)}
    layers = []
    for idx, (lc, (hidden, proj, state, below)) in enumerate(zip(config.layers, layer_dims(config)), 1):
        prefix = f"layer{idx}"
        if lc.type == "lstm":
            w = {g: make(*plan[f"{prefix}.W_{g}"]) for g in GATES}
            u = {g: make(*plan[f"{prefix}.U_{g}"]) for g in GATES}
            peep = {g: rng.uniform(hidden, -r, r) for g in PEEPHOLE_GATES}
            p = make(*plan[f"{prefix}.P"]) if proj is not None else None
            layers.append(LstmLayer(w, u, {g: np.zeros(hidden) for g in GATES}, peep, p))
        else:
            w = make(*plan[f"{prefix}.W"])
            u = make(*plan[f"{prefix}.U"])
            p = make(*plan[f"{prefix}.P"]) if proj is not None else None
            layers.append(RnnLayer(w, u, np.zeros(hidden), p))
    out = OutputLayer(make(*plan["output.W"]), np.zeros(config.num_classes))
    return Network(layers, out, cell_clip, names)


def count_parameters(config):
    """Rows of (display name, kind, shape, count) without allocating, plus the total."""
    rows = []
    dims = layer_dims(config)
    plan = map_plan(config)
    for block, display, kind, nrows, ncols, rank in plan:
        rows.append((display, kind, (nrows, ncols), linear_maps.count_for(kind, nrows, ncols, rank)))
    for idx, (lc, (hidden, *_)) in enumerate(zip(config.layers, dims), 1):
        gates = GATES if lc.type == "lstm" else ("x",)
        for gate in gates:
            name = f"b^{idx}" if gate == "x" else f"b_{gate}^{idx}"
            rows.append((name, "bias", (hidden,), hidden))
        if lc.type == "lstm":
            for gate in PEEPHOLE_GATES:
                rows.append((f"v_{gate}^{idx}", "peephole", (hidden,), hidden))
    rows.append((f"b^{len(config.layers) + 1}", "bias", (config.num_classes,), config.num_classes))
    return rows, sum(row[3] for row in rows)

"""Sequential model graphs with freezing and deterministic dropout replay."""

from __future__ import annotations

import copy

import numpy as np

from .layers import LayerSpec, ShapeError, init_params, layer_forward, out_shape
from .tensor import Tensor, no_grad


class ModelGraph:
    """An ordered layer stack with named parameters and mutable train/eval mode.

    The forward shape chain is validated at construction; a graph that builds
    never reshapes silently at runtime. Dropout draws from one seeded stream
    per instance so a run can be replayed bit-exactly.
    """

    def __init__(self, layers, input_shape, seed: int = 0, arch: str = "",
                 meta: dict | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.arch = arch
        self.meta = dict(meta or {})
        self.mode = "train"
        self.frozen: set[int] = set()
        self._seed = seed
        self.reset_rng(seed)

        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.params: list[dict] = []
        self.buffers: list[dict] = []
        self.shapes = [self.input_shape]
        shape = self.input_shape
        for i, spec in enumerate(self.layers):
            try:
                shape = out_shape(spec, shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({spec.kind}): {e}") from None
            p, b = init_params(spec, self.shapes[-1], rng)
            self.params.append(p)
            self.buffers.append(b)
            self.shapes.append(shape)
        self.output_shape = shape

    # -- mode / rng ----------------------------------------------------------

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def reset_rng(self, seed: int | None = None):
        """Restart the dropout stream (identical seeds replay identical masks)."""
        if seed is not None:
            self._seed = seed
        self.rng = np.random.default_rng(np.random.SeedSequence((self._seed, 0xD0)))
        return self

    # -- parameters ----------------------------------------------------------

    def named_parameters(self, trainable_only: bool = False):
        for i, p in enumerate(self.params):
            if trainable_only and i in self.frozen:
                continue
            for name, t in p.items():
                yield f"L{i}.{name}", t

    def trainable_parameters(self):
        return [t for _, t in self.named_parameters(trainable_only=True)]

    def n_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def zero_grad(self):
        for _, t in self.named_parameters():
            t.grad = None

    def commit_batch_stats(self, momentum: float = 0.1):
        """Fold staged batchnorm batch statistics into the running averages.

        Called by the training loop after an effective optimizer step; frozen
        layers keep their running statistics untouched as well.
        """
        for i, buf in enumerate(self.buffers):
            if "pending_mean" not in buf:
                continue
            mu = buf.pop("pending_mean")
            var = buf.pop("pending_var")
            if i in self.frozen:
                continue
            buf["running_mean"] *= (1.0 - momentum)
            buf["running_mean"] += momentum * mu
            buf["running_var"] *= (1.0 - momentum)
            buf["running_var"] += momentum * var

    # -- freezing ------------------------------------------------------------

    def freeze_layers(self, indices):
        for i in indices:
            if not 0 <= i < len(self.layers):
                raise IndexError(f"no layer {i}")
            self.frozen.add(i)
            for t in self.params[i].values():
                t.requires_grad = False
        return self

    def freeze_tags(self, tags):
        tags = set(tags)
        hit = [i for i, s in enumerate(self.layers) if s.tag in tags]
        missing = tags - {self.layers[i].tag for i in hit}
        if missing:
            raise KeyError(f"no layers tagged {sorted(missing)}")
        return self.freeze_layers(hit)

    def unfreeze_all(self):
        self.frozen.clear()
        for p in self.params:
            for t in p.values():
                t.requires_grad = True
        return self

    # -- forward -------------------------------------------------------------

    def forward(self, x, capture_layer: int | None = None):
        """Run the stack. Returns logits, or (logits, captured) when
        capture_layer is set (the output tensor of that layer index)."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"input shape {x.shape[1:]} != declared {self.input_shape}")
        captured = None
        for i, spec in enumerate(self.layers):
            x = layer_forward(spec, self.params[i], self.buffers[i], x,
                              self.mode, self.rng)
            if i == capture_layer:
                captured = x
        return x if capture_layer is None else (x, captured)

    def __call__(self, x):
        return self.forward(x)

    def predict(self, x) -> np.ndarray:
        """Eval-mode logits as a plain array (no graph recording)."""
        prev = self.mode
        self.eval()
        try:
            with no_grad():
                out = self.forward(x)
        finally:
            self.mode = prev
        return out.data

    # -- state ---------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of all parameters and buffers."""
        out = {}
        for i in range(len(self.layers)):
            for name, t in self.params[i].items():
                out[f"L{i}.{name}"] = t.data
            for name, b in self.buffers[i].items():
                if not name.startswith("pending_"):
                    out[f"L{i}.{name}"] = b
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        current = self.state_arrays()
        if set(state) != set(current):
            missing = set(current) - set(state)
            extra = set(state) - set(current)
            raise KeyError(f"state mismatch: missing={sorted(missing)} "
                           f"extra={sorted(extra)}")
        for k, v in state.items():
            dst = current[k]
            if dst.shape != v.shape:
                raise ShapeError(f"{k}: shape {v.shape} != {dst.shape}")
            dst[...] = v
        return self

    def clone(self) -> "ModelGraph":
        g = ModelGraph(copy.deepcopy(self.layers), self.input_shape,
                       seed=self._seed, arch=self.arch, meta=dict(self.meta))
        g.load_state_dict(self.state_dict())
        g.mode = self.mode
        g.frozen = set(self.frozen)
        for i in g.frozen:
            for t in g.params[i].values():
                t.requires_grad = False
        return g

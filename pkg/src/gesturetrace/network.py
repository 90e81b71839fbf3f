"""Two-branch recurrent gesture classifier written directly on numpy.

Each input frame is split into its velocity block and its edge block. Each
block feeds its own LSTM branch; the final hidden states are concatenated,
passed through dropout (training only) and a fully connected layer, and a
softmax gives class probabilities. Gradients come from hand-written
backpropagation through time; parameters are updated with Adam.

Arithmetic runs in float64. Trained weights are rounded to float32, which is
also the on-disk precision, so save/load round-trips are exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigError, GestureTraceError, InvalidInputError, NumericInputError, SchemaError
from .features import MotionFeatureSequence

TWO_BRANCH = "two-branch"
SINGLE_BRANCH = "single-branch"
BOX_MODE = "box"
NET_MODES = (TWO_BRANCH, SINGLE_BRANCH, BOX_MODE)


@dataclass(frozen=True)
class NetConfig:
    input_width: int
    velocity_width: int = 0
    hidden: int = 64
    classes: int = 3
    dropout: float = 0.2
    mode: str = TWO_BRANCH
    fc_hidden: int = 0
    layers: int = 1

    def __post_init__(self):
        if self.mode not in NET_MODES:
            raise ConfigError(f"unknown network mode {self.mode!r}")
        if self.hidden < 1 or self.classes < 2 or self.layers < 1 or self.fc_hidden < 0:
            raise ConfigError(f"invalid network size in {self}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.input_width < 1:
            raise ConfigError("input width must be positive")
        if self.mode == TWO_BRANCH and not 0 < self.velocity_width <= self.input_width:
            raise ConfigError(f"two-branch mode needs 0 < velocity_width <= {self.input_width}, "
                              f"got {self.velocity_width}")
        if self.mode == BOX_MODE and self.input_width != 4:
            raise ConfigError(f"box mode expects 4 input columns, got {self.input_width}")

    def branches(self) -> list[tuple[str, int, int]]:
        """``(name, first column, stop column)`` of every non-empty branch."""
        if self.mode == TWO_BRANCH:
            spans = [("velocity", 0, self.velocity_width),
                     ("shape", self.velocity_width, self.input_width)]
            return [s for s in spans if s[2] > s[1]]
        return [("sequence", 0, self.input_width)]

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h = self.hidden
        out: dict[str, tuple[int, ...]] = {}
        for name, lo, hi in self.branches():
            width = hi - lo
            for layer in range(self.layers):
                p = f"{name}.{layer}"
                out[f"{p}.W"] = (width, 4 * h)
                out[f"{p}.U"] = (h, 4 * h)
                out[f"{p}.b"] = (4 * h,)
                width = h
        feat = h * len(self.branches())
        if self.fc_hidden:
            out["fc.W"] = (feat, self.fc_hidden)
            out["fc.b"] = (self.fc_hidden,)
            feat = self.fc_hidden
        out["out.W"] = (feat, self.classes)
        out["out.b"] = (self.classes,)
        return out


@dataclass(eq=False)
class TraceSeqModel:
    config: NetConfig
    params: dict[str, np.ndarray]
    seed: int = 0

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "TraceSeqModel":
        return TraceSeqModel(self.config, {k: v.copy() for k, v in self.params.items()},
                             self.seed)

    def round_to_float32(self) -> "TraceSeqModel":
        for k, v in self.params.items():
            self.params[k] = v.astype(np.float32).astype(np.float64)
        return self


@dataclass(eq=False)
class OptimizerState:
    lr: float = 0.004
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_network(cfg: NetConfig, seed: int = 0) -> TraceSeqModel:
    """Uniform ``[-s, s]`` weights with ``s = 1/sqrt(fan_in)``; forget-gate bias 1.

    A recurrent cell's fan-in counts both its input and its hidden state.
    """
    rng = np.random.default_rng(seed)
    h = cfg.hidden
    shapes = cfg.shapes()
    params = {}
    for name, shape in shapes.items():
        recurrent = not name.startswith(("fc.", "out."))
        if name.endswith(".b"):
            p = np.zeros(shape)
            if recurrent:
                p[h:2 * h] = 1.0
        else:
            if recurrent:
                fan_in = shapes[name[:-1] + "W"][0] + h
            else:
                fan_in = shape[0]
            s = 1.0 / np.sqrt(max(fan_in, 1))
            p = rng.uniform(-s, s, size=shape)
        params[name] = p
    return TraceSeqModel(cfg, params, seed).round_to_float32()


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(model: TraceSeqModel, X) -> np.ndarray:
    if isinstance(X, MotionFeatureSequence):
        X = X.values
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise SchemaError(f"expected (batch, T, D) input, got shape {X.shape}")
    if X.shape[1] < 1:
        raise InvalidInputError("sequence must have at least one frame")
    if X.shape[2] != model.config.input_width:
        raise SchemaError(f"input width {X.shape[2]} does not match model width "
                          f"{model.config.input_width}")
    if not np.all(np.isfinite(X)):
        raise NumericInputError("non-finite values in network input")
    return X


def _lstm_forward(x, W, U, b):
    B, T, _ = x.shape
    H = U.shape[0]
    gx = x @ W + b  # (B, T, 4H)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    hs[0] = h
    cs[0] = c
    for t in range(T):
        z = gx[:, t] + h @ U
        a = np.empty_like(z)
        a[:, :3 * H] = _sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        h = a[:, 2 * H:3 * H] * np.tanh(c)
        gates[t] = a
        hs[t + 1] = h
        cs[t + 1] = c
    return hs, cs, gates


def _lstm_backward(x, W, U, hs, cs, gates, dh_seq, need_dx=True):
    """BPTT through one LSTM layer; ``dh_seq`` is dL/dh_t, shape (T, B, H)."""
    T = gates.shape[0]
    H = U.shape[0]
    dgates = np.empty_like(gates)
    dh_next = np.zeros_like(hs[0])
    dc_next = np.zeros_like(cs[0])
    for t in range(T - 1, -1, -1):
        a = gates[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dgates[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dz @ U.T
    B = x.shape[0]
    dz_bt = dgates.transpose(1, 0, 2)  # (B, T, 4H)
    dW = x.reshape(B * T, -1).T @ dz_bt.reshape(B * T, -1)
    dU = hs[:-1].reshape(T * B, H).T @ dgates.reshape(T * B, -1)
    db = dgates.sum(axis=(0, 1))
    dx = dz_bt @ W.T if need_dx else None
    return dx, dW, dU, db


def _forward(model: TraceSeqModel, X: np.ndarray, mask: np.ndarray | None):
    cfg = model.config
    P = model.params
    cache = {"branches": []}
    finals = []
    for name, lo, hi in cfg.branches():
        inp = X[:, :, lo:hi]
        layers = []
        for layer in range(cfg.layers):
            p = f"{name}.{layer}"
            hs, cs, gates = _lstm_forward(inp, P[f"{p}.W"], P[f"{p}.U"], P[f"{p}.b"])
            layers.append((inp, hs, cs, gates))
            inp = hs[1:].transpose(1, 0, 2)
        cache["branches"].append((name, layers))
        finals.append(layers[-1][1][-1])
    feat = np.concatenate(finals, axis=1)
    if mask is not None:
        feat = feat * mask
    cache["feat"] = feat
    if cfg.fc_hidden:
        act = np.tanh(feat @ P["fc.W"] + P["fc.b"])
        cache["act"] = act
    else:
        act = feat
    logits = act @ P["out.W"] + P["out.b"]
    cache["logits"] = logits
    return softmax(logits), cache


def _dropout_mask(model: TraceSeqModel, batch: int, rng) -> np.ndarray | None:
    p = model.config.dropout
    if p <= 0:
        return None
    width = model.config.hidden * len(model.config.branches())
    return (rng.random((batch, width)) >= p) / (1.0 - p)


def forward(model: TraceSeqModel, seq, train_mode: bool = False, rng=None):
    """Class probabilities for one sequence ``(T, D)`` or a batch ``(B, T, D)``.

    With ``train_mode`` the dropout mask is drawn from ``rng`` and the
    activation cache is returned alongside the probabilities.
    """
    X = _as_batch(model, seq)
    if not train_mode:
        probs, _ = _forward(model, X, None)
        return probs[0] if np.ndim(seq) == 2 or isinstance(seq, MotionFeatureSequence) else probs
    rng = np.random.default_rng(rng)
    mask = _dropout_mask(model, len(X), rng)
    probs, cache = _forward(model, X, mask)
    cache["mask"] = mask
    return probs, cache


def loss_and_gradients(model: TraceSeqModel, X, y, rng=None, dropout: bool = True
                       ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    X = _as_batch(model, X)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    if len(y) == 0:
        raise InvalidInputError("empty batch")
    if len(y) != len(X):
        raise InvalidInputError("batch features and labels differ in length")
    if y.min() < 0 or y.max() >= model.config.classes:
        raise InvalidInputError("label outside [0, classes)")
    cfg = model.config
    P = model.params
    B = len(X)
    mask = _dropout_mask(model, B, np.random.default_rng(rng)) if dropout else None
    probs, cache = _forward(model, X, mask)

    logits = cache["logits"]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(B), y].mean())

    grads: dict[str, np.ndarray] = {}
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    act = cache["act"] if cfg.fc_hidden else cache["feat"]
    grads["out.W"] = act.T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    dact = dlogits @ P["out.W"].T
    if cfg.fc_hidden:
        dpre = dact * (1.0 - cache["act"] ** 2)
        grads["fc.W"] = cache["feat"].T @ dpre
        grads["fc.b"] = dpre.sum(axis=0)
        dfeat = dpre @ P["fc.W"].T
    else:
        dfeat = dact
    if mask is not None:
        dfeat = dfeat * mask

    H = cfg.hidden
    for k, (name, layers) in enumerate(cache["branches"]):
        T = X.shape[1]
        dh_seq = np.zeros((T, B, H))
        dh_seq[-1] = dfeat[:, k * H:(k + 1) * H]
        for layer in range(cfg.layers - 1, -1, -1):
            inp, hs, cs, gates = layers[layer]
            p = f"{name}.{layer}"
            dx, dW, dU, db = _lstm_backward(inp, P[f"{p}.W"], P[f"{p}.U"], hs, cs, gates,
                                            dh_seq, need_dx=layer > 0)
            grads[f"{p}.W"], grads[f"{p}.U"], grads[f"{p}.b"] = dW, dU, db
            if layer > 0:
                dh_seq = dx.transpose(1, 0, 2)
    return loss, {k: grads[k] for k in P}


def adam_step(model: TraceSeqModel, grads: dict[str, np.ndarray], opt: OptimizerState
              ) -> tuple[TraceSeqModel, OptimizerState]:
    """One bias-corrected Adam update, applied in place."""
    if set(grads) != set(model.params):
        raise GestureTraceError("gradient keys do not match model parameters")
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for k, p in model.params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise GestureTraceError(f"gradient shape {g.shape} != parameter shape {p.shape} "
                                    f"for {k}")
        if k not in opt.m:
            opt.m[k] = np.zeros_like(p)
            opt.v[k] = np.zeros_like(p)
        m, v = opt.m[k], opt.v[k]
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        p -= opt.lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return model, opt


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: float | None = None


def predict_proba_batched(model: TraceSeqModel, X, batch: int = 1024) -> np.ndarray:
    X = _as_batch(model, X)
    return np.concatenate([_forward(model, X[i:i + batch], None)[0]
                           for i in range(0, len(X), batch)]) if len(X) else \
        np.zeros((0, model.config.classes))


def train(model: TraceSeqModel, X, y, epochs: int = 60, batch_size: int = 32, seed: int = 0,
          lr: float = 0.004, X_val=None, y_val=None, opt: OptimizerState | None = None,
          callback=None) -> tuple[TraceSeqModel, list[EpochRecord]]:
    """Mini-batch Adam training with seeded shuffling and dropout.

    The model is updated in place and rounded to float32 at the end.
    """
    X = _as_batch(model, X) if len(X) else None
    if X is None:
        raise InvalidInputError("empty training set")
    y = np.asarray(y, dtype=np.int64)
    opt = opt or OptimizerState(lr=lr)
    rng = np.random.default_rng(seed)
    history: list[EpochRecord] = []
    for epoch in range(epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            loss, grads = loss_and_gradients(model, X[idx], y[idx], rng)
            adam_step(model, grads, opt)
            total += loss * len(idx)
        train_acc = float(np.mean(predict_proba_batched(model, X).argmax(1) == y))
        val_acc = None
        if X_val is not None and len(X_val):
            val_acc = float(np.mean(predict_proba_batched(model, X_val).argmax(1)
                                    == np.asarray(y_val)))
        rec = EpochRecord(epoch, total / len(X), train_acc, val_acc)
        history.append(rec)
        if callback is not None:
            callback(rec)
    if epochs:
        model.round_to_float32()
    return model, history


# ---------------------------------------------------------------------------
# weight file
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"GTMODEL1"
MODEL_FORMAT_VERSION = 1


def save_model(model: TraceSeqModel, path, extra: dict | None = None) -> None:
    """Write a JSON header followed by little-endian float32 tensors."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": asdict(model.config),
        "seed": model.seed,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<IQ", MODEL_FORMAT_VERSION, len(head)))
        f.write(head)
        for v in model.params.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_model(path) -> tuple[TraceSeqModel, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise SchemaError(f"{path}: not a model file")
    try:
        version, n_head = struct.unpack_from("<IQ", data, 8)
    except struct.error as exc:
        raise SchemaError(f"{path}: truncated model file") from exc
    if version != MODEL_FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported model version {version}")
    off = 8 + struct.calcsize("<IQ")
    try:
        header = json.loads(data[off:off + n_head].decode("utf-8"))
        cfg = NetConfig(**header["config"])
        off += n_head
        params = {}
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            n = int(np.prod(shape)) if shape else 1
            params[t["name"]] = np.frombuffer(data, dtype="<f4", count=n,
                                              offset=off).reshape(shape).astype(np.float64)
            off += 4 * n
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GestureTraceError):
            raise
        raise SchemaError(f"{path}: malformed model file ({exc})") from exc
    if {k: tuple(v.shape) for k, v in params.items()} != cfg.shapes():
        raise SchemaError(f"{path}: tensor shapes do not match the stored config")
    return TraceSeqModel(cfg, params, int(header.get("seed", 0))), header.get("extra", {})

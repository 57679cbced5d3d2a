"""Learned search guide: integer-embedding state encoder, densely connected
trunk, and three linear heads (next statement, slot drops, next function).

Everything is plain numpy with closed-form gradients; float32 by default,
dtype-generic so tests can run the same math in float64.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dsl import N_FUNCTION_CLASSES, build_vocabulary
from .env import Environment, ExampleState

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

EMB_ROWS = 513  # values -256..255 at value+256, NULL at 512
NULL_INDEX = 512
LIST_LEN = 20
PROJ_WIDTH = 56
FINAL_WIDTH = 256
DEFAULT_EMB_DIM = 20
DEFAULT_BLOCK_LAYERS = 10

_TYPE_BITS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class ModelError(Exception):
    pass


class DimensionMismatchError(ModelError):
    """Environment shape does not match the model's v."""


class CheckpointError(ModelError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class VocabMismatchError(CheckpointError):
    pass


class CorruptFileError(CheckpointError):
    pass


def selu(z: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * np.expm1(z))


def _selu_grad(z: np.ndarray) -> np.ndarray:
    return SELU_LAMBDA * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(z))


@dataclass
class GuideModelParams:
    v: int
    d: int
    block_layers: int
    tensors: dict[str, np.ndarray]

    @property
    def var_len(self) -> int:
        return 2 + LIST_LEN * self.d

    @property
    def n_statements(self) -> int:
        return len(build_vocabulary(self.v))

    @property
    def dtype(self):
        return self.tensors["emb"].dtype

    def copy(self) -> "GuideModelParams":
        return GuideModelParams(self.v, self.d, self.block_layers,
                                {k: t.copy() for k, t in self.tensors.items()})

    def astype(self, dtype) -> "GuideModelParams":
        return GuideModelParams(self.v, self.d, self.block_layers,
                                {k: t.astype(dtype) for k, t in self.tensors.items()})


def _layer_widths(v: int, block_layers: int) -> list[tuple[int, int]]:
    s = PROJ_WIDTH * (v + 1)
    widths = []
    for i in range(1, block_layers + 1):
        fan_in = s + PROJ_WIDTH * (i - 1)
        fan_out = PROJ_WIDTH if i < block_layers else FINAL_WIDTH
        widths.append((fan_in, fan_out))
    return widths


def init_params(
    v: int,
    d: int = DEFAULT_EMB_DIM,
    block_layers: int = DEFAULT_BLOCK_LAYERS,
    seed: int = 0,
    dtype=np.float32,
) -> GuideModelParams:
    """Embedding rows uniform +-0.1; affine weights uniform +-fan_in^-1/2;
    biases zero. Draw order is fixed so a seed pins every tensor."""
    if v < 1 or d < 1 or block_layers < 1:
        raise ValueError("v, d, block_layers must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors: dict[str, np.ndarray] = {}

    def affine(name: str, fan_in: int, fan_out: int) -> None:
        lim = fan_in ** -0.5
        tensors[name + "_w"] = rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype)
        tensors[name + "_b"] = np.zeros(fan_out, dtype=dtype)

    tensors["emb"] = rng.uniform(-0.1, 0.1, (EMB_ROWS, d)).astype(dtype)
    affine("proj", 2 + LIST_LEN * d, PROJ_WIDTH)
    for i, (fan_in, fan_out) in enumerate(_layer_widths(v, block_layers), start=1):
        affine(f"dense{i}", fan_in, fan_out)
    n_statements = len(build_vocabulary(v))
    affine("stmt", FINAL_WIDTH, n_statements)
    affine("drop", FINAL_WIDTH, v)
    affine("func", FINAL_WIDTH, N_FUNCTION_CLASSES)
    return GuideModelParams(v, d, block_layers, tensors)


# ---------------------------------------------------------------------------
# Environment encoding


def _value_indices(value, out: np.ndarray) -> int:
    """Fill one slot's LIST_LEN embedding indices; return the type code."""
    out[:] = NULL_INDEX
    if value is None:
        return 0
    if isinstance(value, int):
        out[0] = value + 256
        return 1
    for i, x in enumerate(value):
        out[i] = x + 256
    return 2


def states_to_arrays(states: Sequence[ExampleState], v: int) -> tuple[np.ndarray, np.ndarray]:
    """(k, v+1, LIST_LEN) embedding indices and (k, v+1) type codes; the
    target output is the final position."""
    k = len(states)
    idx = np.empty((k, v + 1, LIST_LEN), dtype=np.int16)
    types = np.empty((k, v + 1), dtype=np.int8)
    for si, state in enumerate(states):
        if len(state.slots) != v:
            raise DimensionMismatchError(f"state has {len(state.slots)} slots, model expects {v}")
        for vi in range(v):
            types[si, vi] = _value_indices(state.slots[vi], idx[si, vi])
        types[si, v] = _value_indices(state.output, idx[si, v])
    return idx, types


def env_to_arrays(env: Environment, v: int) -> tuple[np.ndarray, np.ndarray]:
    return states_to_arrays(env.states, v)


# ---------------------------------------------------------------------------
# Forward/backward


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Prediction:
    statement_logprobs: np.ndarray  # (|S|,) log-softmax
    drop_probs: np.ndarray  # (v,) sigmoid
    function_logprobs: np.ndarray  # (38,) log-softmax


def _forward_core(params: GuideModelParams, idx: np.ndarray, types: np.ndarray, want_cache: bool):
    """idx (B,k,m,L), types (B,k,m) -> per-head outputs plus a backward cache."""
    t = params.tensors
    dt = params.dtype
    B, k, m, L = idx.shape
    if m != params.v + 1:
        raise DimensionMismatchError(f"{m - 1} slots vs model v={params.v}")

    flat_idx = idx.reshape(-1).astype(np.int64)
    emb = t["emb"]
    x = np.empty((B * k * m, 2 + L * params.d), dtype=dt)
    x[:, :2] = _TYPE_BITS.astype(dt)[types.reshape(-1)]
    x[:, 2:] = emb[flat_idx].reshape(B * k * m, L * params.d)

    z0 = x @ t["proj_w"] + t["proj_b"]
    a0 = selu(z0)
    state = a0.reshape(B * k, m * PROJ_WIDTH)

    acts = [state]
    zs = []
    nl = params.block_layers
    for i in range(1, nl + 1):
        cat = acts[0] if i == 1 else np.concatenate(acts[:i], axis=1)
        z = cat @ t[f"dense{i}_w"] + t[f"dense{i}_b"]
        zs.append(z)
        if i < nl:
            acts.append(selu(z))
    block_out = zs[-1]

    pooled = block_out.reshape(B, k, FINAL_WIDTH).mean(axis=1)
    stmt_logits = pooled @ t["stmt_w"] + t["stmt_b"]
    drop_logits = pooled @ t["drop_w"] + t["drop_b"]
    func_logits = pooled @ t["func_w"] + t["func_b"]

    outputs = (_log_softmax(stmt_logits), _sigmoid(drop_logits), _log_softmax(func_logits))
    cache = None
    if want_cache:
        cache = {
            "B": B, "k": k, "m": m, "flat_idx": flat_idx, "x": x, "z0": z0,
            "acts": acts, "zs": zs, "pooled": pooled,
            "stmt_logits": stmt_logits, "drop_logits": drop_logits, "func_logits": func_logits,
        }
    return outputs, cache


def forward_arrays(params: GuideModelParams, idx: np.ndarray, types: np.ndarray):
    return _forward_core(params, idx, types, want_cache=False)[0]


def forward(env: Environment, params: GuideModelParams) -> Prediction:
    idx, types = env_to_arrays(env, params.v)
    (slp, dp, flp), _ = _forward_core(params, idx[None], types[None], want_cache=False)
    return Prediction(slp[0], dp[0], flp[0])


def forward_batch(envs: Sequence[Environment], params: GuideModelParams) -> list[Prediction]:
    if not envs:
        return []
    ks = {e.k for e in envs}
    if len(ks) == 1:
        pairs = [env_to_arrays(e, params.v) for e in envs]
        idx = np.stack([p[0] for p in pairs])
        types = np.stack([p[1] for p in pairs])
        (slp, dp, flp), _ = _forward_core(params, idx, types, want_cache=False)
        return [Prediction(slp[i], dp[i], flp[i]) for i in range(len(envs))]
    return [forward(e, params) for e in envs]


# ---------------------------------------------------------------------------
# Loss


def loss(
    pred: Prediction,
    row,
    disable_function_head: bool = False,
    disable_drop_head: bool = False,
) -> float:
    """Statement CE + function CE + per-live-slot binary CE; disabled heads
    contribute zero."""
    total = -float(pred.statement_logprobs[row.next_statement])
    if not disable_function_head:
        total -= float(pred.function_logprobs[row.next_function])
    if not disable_drop_head:
        p = np.clip(pred.drop_probs, 1e-12, 1.0 - 1e-12)
        for s, (masked, label) in enumerate(zip(row.drop_mask, row.drop_labels)):
            if masked:
                total -= float(np.log(p[s]) if label else np.log1p(-p[s]))
    return total


def batch_loss_and_grads(
    params: GuideModelParams,
    batch: dict,
    disable_function_head: bool = False,
    disable_drop_head: bool = False,
):
    """Mean per-row loss over the batch plus gradients for every tensor."""
    t = params.tensors
    (stmt_logp, drop_p, func_logp), cache = _forward_core(
        params, batch["idx"], batch["types"], want_cache=True
    )
    B, k, m = cache["B"], cache["k"], cache["m"]
    rows = np.arange(B)
    stmt_y = batch["stmt"]
    loss_val = -stmt_logp[rows, stmt_y].mean()
    if not disable_function_head:
        loss_val = loss_val - func_logp[rows, batch["func"]].mean()
    if not disable_drop_head:
        dl = cache["drop_logits"]
        y = batch["drop_y"]
        mask = batch["drop_m"]
        bce = np.maximum(dl, 0) - dl * y + np.log1p(np.exp(-np.abs(dl)))
        loss_val = loss_val + (bce * mask).sum(axis=1).mean()

    grads = {name: None for name in t}

    g_stmt = np.exp(stmt_logp)
    g_stmt[rows, stmt_y] -= 1.0
    g_stmt /= B
    if disable_function_head:
        g_func = np.zeros_like(func_logp)
    else:
        g_func = np.exp(func_logp)
        g_func[rows, batch["func"]] -= 1.0
        g_func /= B
    if disable_drop_head:
        g_drop = np.zeros_like(drop_p)
    else:
        g_drop = batch["drop_m"] * (drop_p - batch["drop_y"]) / B

    pooled = cache["pooled"]
    grads["stmt_w"] = pooled.T @ g_stmt
    grads["stmt_b"] = g_stmt.sum(axis=0)
    grads["func_w"] = pooled.T @ g_func
    grads["func_b"] = g_func.sum(axis=0)
    grads["drop_w"] = pooled.T @ g_drop
    grads["drop_b"] = g_drop.sum(axis=0)

    d_pooled = g_stmt @ t["stmt_w"].T + g_func @ t["func_w"].T + g_drop @ t["drop_w"].T
    d_block = np.broadcast_to(
        (d_pooled / k)[:, None, :], (B, k, FINAL_WIDTH)
    ).reshape(B * k, FINAL_WIDTH)

    acts, zs = cache["acts"], cache["zs"]
    nl = params.block_layers
    d_acts = [np.zeros_like(a) for a in acts]
    dz = d_block
    for i in range(nl, 0, -1):
        if i < nl:
            dz = d_acts[i] * _selu_grad(zs[i - 1])
        cat = acts[0] if i == 1 else np.concatenate(acts[:i], axis=1)
        grads[f"dense{i}_w"] = cat.T @ dz
        grads[f"dense{i}_b"] = dz.sum(axis=0)
        d_cat = dz @ t[f"dense{i}_w"].T
        off = 0
        for j in range(i):
            w = acts[j].shape[1]
            d_acts[j] += d_cat[:, off : off + w]
            off += w

    d_state = d_acts[0].reshape(B * k * m, PROJ_WIDTH)
    dz0 = d_state * _selu_grad(cache["z0"])
    grads["proj_w"] = cache["x"].T @ dz0
    grads["proj_b"] = dz0.sum(axis=0)
    d_x = dz0 @ t["proj_w"].T

    d = params.d
    flat_idx = cache["flat_idx"]  # one index per (state, slot, list position)
    demb_rows = d_x[:, 2:].reshape(-1, d)
    d_emb = np.zeros_like(t["emb"])
    for col in range(d):
        d_emb[:, col] = np.bincount(flat_idx, weights=demb_rows[:, col], minlength=EMB_ROWS)
    grads["emb"] = d_emb

    extras = {
        "stmt_top1": int((stmt_logp.argmax(axis=1) == stmt_y).sum()),
    }
    return float(loss_val), grads, extras


# ---------------------------------------------------------------------------
# Checkpoints

CHECKPOINT_MAGIC = b"PCCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: GuideModelParams, path, extra_meta: Optional[dict] = None) -> None:
    meta = {
        "v": params.v,
        "d": params.d,
        "block_layers": params.block_layers,
        "n_statements": params.n_statements,
        "vocab_hash": build_vocabulary(params.v).content_hash(),
    }
    if extra_meta:
        meta.update(extra_meta)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    names = sorted(params.tensors)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CorruptFileError("unexpected end of file")
    return data


def load_checkpoint(path, expect_v: Optional[int] = None) -> GuideModelParams:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CorruptFileError("bad magic")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise VersionMismatchError(f"format version {version}, expected {CHECKPOINT_VERSION}")
        (meta_len,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            meta = json.loads(_read_exact(fh, meta_len))
            v, d, block_layers = meta["v"], meta["d"], meta["block_layers"]
        except (ValueError, KeyError) as e:
            raise CorruptFileError(f"bad metadata: {e}")
        if expect_v is not None and v != expect_v:
            raise VocabMismatchError(f"checkpoint has v={v}, expected v={expect_v}")
        if meta.get("vocab_hash") != build_vocabulary(v).content_hash():
            raise VocabMismatchError("statement vocabulary hash mismatch")

        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode()
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            data = _read_exact(fh, count * 4)
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise CorruptFileError("trailing bytes")

    params = GuideModelParams(v, d, block_layers, tensors)
    _check_shapes(params, meta)
    return params


def _check_shapes(params: GuideModelParams, meta: dict) -> None:
    expected: dict[str, tuple] = {
        "emb": (EMB_ROWS, params.d),
        "proj_w": (params.var_len, PROJ_WIDTH),
        "proj_b": (PROJ_WIDTH,),
        "stmt_w": (FINAL_WIDTH, meta["n_statements"]),
        "stmt_b": (meta["n_statements"],),
        "drop_w": (FINAL_WIDTH, params.v),
        "drop_b": (params.v,),
        "func_w": (FINAL_WIDTH, N_FUNCTION_CLASSES),
        "func_b": (N_FUNCTION_CLASSES,),
    }
    for i, (fan_in, fan_out) in enumerate(_layer_widths(params.v, params.block_layers), start=1):
        expected[f"dense{i}_w"] = (fan_in, fan_out)
        expected[f"dense{i}_b"] = (fan_out,)
    if meta["n_statements"] != params.n_statements:
        raise VocabMismatchError("n_statements does not match vocabulary")
    for name, shape in expected.items():
        if name not in params.tensors:
            raise CorruptFileError(f"missing tensor {name}")
        if params.tensors[name].shape != shape:
            raise CorruptFileError(
                f"tensor {name} has shape {params.tensors[name].shape}, expected {shape}"
            )


# ---------------------------------------------------------------------------
# Guide wrapper used by the search


class NeuralGuide:
    def __init__(self, params: GuideModelParams):
        self.params = params
        self.v = params.v
        self.vocab = build_vocabulary(params.v)

    def predict(self, env: Environment) -> Prediction:
        return forward(env, self.params)

    def predict_batch(self, envs: Sequence[Environment]) -> list[Prediction]:
        return forward_batch(envs, self.params)

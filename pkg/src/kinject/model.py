"""Mixture-of-Knowledge fusion and a post-norm transformer encoder-decoder.

The fusion step is

    F_I' = F_I + Att(F_I, K_c, K_c) + Att(F_I, K_t, K_t)
    Att(Q, K, V) = softmax(Q K^T / sqrt(d)) V

with no learned projections unless ``ModelConfig.mok_projections`` is set.
The fused features feed the encoder; the decoder cross-attends to its output.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from kinject import tensor as T
from kinject.errors import ConfigError, FormatError, NumericError, ShapeError
from kinject.tensor import Tensor

NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 3
    ffn_dim: int = 128
    max_len: int = 60
    n_concepts: int = 76
    max_triplets: int = 32
    decode: str = "greedy"
    beam_width: int = 3
    mok_projections: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_heads", "n_layers", "ffn_dim", "max_len",
                     "n_concepts", "max_triplets", "beam_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.decode not in ("greedy", "beam"):
            raise ConfigError(f"unknown decode strategy {self.decode!r}")

    @classmethod
    def preset(cls, name: str, vocab_size: int, **overrides) -> "ModelConfig":
        presets = {
            "large": dict(d_model=512, n_heads=8, n_layers=3, ffn_dim=512),
            "desk": dict(d_model=64, n_heads=4, n_layers=3, ffn_dim=128),
            "micro": dict(d_model=32, n_heads=2, n_layers=1, ffn_dim=64),
        }
        if name not in presets:
            raise ConfigError(f"unknown model preset {name!r}")
        return cls(vocab_size=vocab_size, **{**presets[name], **overrides})


# ---- parameters ----------------------------------------------------------

def _linear(params, rng, prefix, n_in, n_out):
    params[f"{prefix}.w"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_in, n_out)), True)
    params[f"{prefix}.b"] = Tensor(np.zeros(n_out), True)


def _norm(params, prefix, d):
    params[f"{prefix}.g"] = Tensor(np.ones(d), True)
    params[f"{prefix}.b"] = Tensor(np.zeros(d), True)


def _attn_params(params, rng, prefix, d):
    for proj in ("q", "k", "v", "o"):
        _linear(params, rng, f"{prefix}.{proj}", d, d)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    p: dict[str, Tensor] = {}
    p["tok_emb"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (cfg.vocab_size, d)), True)
    if cfg.mok_projections:
        for branch in ("mok_c", "mok_t"):
            for proj in ("q", "k", "v"):
                p[f"{branch}.{proj}"] = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), (d, d)), True)
    for layer in range(cfg.n_layers):
        e = f"enc{layer}"
        _attn_params(p, rng, f"{e}.self", d)
        _norm(p, f"{e}.ln1", d)
        _linear(p, rng, f"{e}.ff1", d, cfg.ffn_dim)
        _linear(p, rng, f"{e}.ff2", cfg.ffn_dim, d)
        _norm(p, f"{e}.ln2", d)
    for layer in range(cfg.n_layers):
        x = f"dec{layer}"
        _attn_params(p, rng, f"{x}.self", d)
        _norm(p, f"{x}.ln1", d)
        _attn_params(p, rng, f"{x}.cross", d)
        _norm(p, f"{x}.ln2", d)
        _linear(p, rng, f"{x}.ff1", d, cfg.ffn_dim)
        _linear(p, rng, f"{x}.ff2", cfg.ffn_dim, d)
        _norm(p, f"{x}.ln3", d)
    _linear(p, rng, "out", d, cfg.vocab_size)
    return p


# ---- attention and fusion ------------------------------------------------

def _t(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def attention(Q, K, V, mask=None):
    """softmax(Q K^T / sqrt(d)) V, d = Q's column count; ``mask`` True = blocked."""
    Q, K, V = _t(Q), _t(K), _t(V)
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]:
        raise ShapeError(f"attention: Q {Q.shape}, K {K.shape}, V {V.shape}")
    scores = T.scale(T.matmul(Q, T.transpose(K)), 1.0 / math.sqrt(Q.shape[1]))
    if mask is not None:
        scores = T.mask_fill(scores, mask, NEG_INF)
    return T.matmul(T.softmax(scores), V)


def mok_fuse(F_I, K_c, K_t, params=None):
    """Residual cross-attention of image features over both knowledge sources."""
    F_I, K_c, K_t = _t(F_I), _t(K_c), _t(K_t)
    d = F_I.shape[1]
    if K_c.shape[1] != d or K_t.shape[1] != d:
        raise ShapeError(f"mok_fuse: F_I {F_I.shape}, K_c {K_c.shape}, K_t {K_t.shape}")
    if params is not None and "mok_c.q" in params:
        att_c = attention(F_I @ params["mok_c.q"], K_c @ params["mok_c.k"], K_c @ params["mok_c.v"])
        att_t = attention(F_I @ params["mok_t.q"], K_t @ params["mok_t.k"], K_t @ params["mok_t.v"])
    else:
        att_c = attention(F_I, K_c, K_c)
        att_t = attention(F_I, K_t, K_t)
    return F_I + att_c + att_t


def linear(x, params, prefix):
    return T.add(T.matmul(x, params[f"{prefix}.w"]), params[f"{prefix}.b"])


def multi_head(x, mem, params, prefix, n_heads, mask=None):
    q = linear(x, params, f"{prefix}.q")
    k = linear(mem, params, f"{prefix}.k")
    v = linear(mem, params, f"{prefix}.v")
    d = q.shape[1]
    h = d // n_heads
    heads = [attention(T.columns(q, i * h, (i + 1) * h), T.columns(k, i * h, (i + 1) * h),
                       T.columns(v, i * h, (i + 1) * h), mask) for i in range(n_heads)]
    out = heads[0] if n_heads == 1 else T.concat(heads, axis=1)
    return linear(out, params, f"{prefix}.o")


def _ln(x, params, prefix):
    return T.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _ffn(x, params, prefix):
    return linear(T.gelu(linear(x, params, f"{prefix}.ff1")), params, f"{prefix}.ff2")


def encode(params, cfg: ModelConfig, fused):
    x = _t(fused)
    for layer in range(cfg.n_layers):
        e = f"enc{layer}"
        x = _ln(x + multi_head(x, x, params, f"{e}.self", cfg.n_heads), params, f"{e}.ln1")
        x = _ln(x + _ffn(x, params, e), params, f"{e}.ln2")
    return x


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def decode_logits(params, cfg: ModelConfig, memory, prefix):
    """Next-token logits for every position of ``prefix`` (causally masked)."""
    prefix = np.asarray(prefix, dtype=np.int64)
    n = len(prefix)
    if n > cfg.max_len + 1:
        raise ShapeError(f"prefix length {n} exceeds max_len {cfg.max_len} (+ start token)")
    d = cfg.d_model
    x = T.scale(T.embedding_lookup(params["tok_emb"], prefix), math.sqrt(d))
    x = x + Tensor(sinusoidal_positions(n, d))
    mask = causal_mask(n)
    for layer in range(cfg.n_layers):
        p = f"dec{layer}"
        x = _ln(x + multi_head(x, x, params, f"{p}.self", cfg.n_heads, mask), params, f"{p}.ln1")
        x = _ln(x + multi_head(x, memory, params, f"{p}.cross", cfg.n_heads), params, f"{p}.ln2")
        x = _ln(x + _ffn(x, params, p), params, f"{p}.ln3")
    return linear(x, params, "out")


def decode_step(params, cfg, memory, prefix) -> np.ndarray:
    with T.no_grad():
        return decode_logits(params, cfg, memory, prefix).data[-1]


def forward(params, cfg, F_I, K_c, K_t, prefix):
    memory = encode(params, cfg, mok_fuse(F_I, K_c, K_t, params))
    return decode_logits(params, cfg, memory, prefix)


# ---- samples, loss, training ---------------------------------------------

@dataclass
class Sample:
    """One training/eval example with its knowledge already materialized."""

    id: str
    features: np.ndarray
    K_c: np.ndarray
    K_t: np.ndarray
    target: list[int]
    prompts: list[str] = field(default_factory=list)


def teacher_forcing(target, cfg: ModelConfig, bos=1, eos=2):
    ids = list(target)[: cfg.max_len]
    return [bos] + ids, ids + [eos]


def sample_loss(params, cfg, s: Sample, pad_index=0):
    inp, out = teacher_forcing(s.target, cfg)
    logits = forward(params, cfg, s.features, s.K_c, s.K_t, inp)
    return T.cross_entropy(logits, out, pad_index)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    weight_decay: float = 5e-5
    decoupled_weight_decay: bool = True
    batch_size: int = 8
    seed: int = 0


@dataclass
class TrainResult:
    params: dict
    history: list[dict]
    best_epoch: int
    best_val: float


def mean_loss(params, cfg, samples) -> float:
    if not samples:
        return float("nan")
    with T.no_grad():
        return float(np.mean([float(sample_loss(params, cfg, s).data) for s in samples]))


def _dump_nan(out_dir, epoch, batch, params):
    info = {"epoch": epoch, "batch_ids": [s.id for s in batch],
            "nonfinite_params": [k for k, v in params.items() if not np.all(np.isfinite(v.data))]}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "nan_dump.json").write_text(json.dumps(info, indent=1) + "\n")
    return info


def train(train_samples, val_samples, cfg: ModelConfig, tcfg: TrainConfig, out_dir=None,
          params=None, log=None, timing=True) -> TrainResult:
    """Teacher-forced cross-entropy with Adam; keeps the best-validation weights.

    With ``out_dir`` the best checkpoint and ``train_log.csv`` are written there.
    """
    if not train_samples:
        raise ValueError("training split is empty")
    params = params if params is not None else init_params(cfg, tcfg.seed)
    opt = T.Adam(params.values(), lr=tcfg.lr, weight_decay=tcfg.weight_decay,
                 decoupled=tcfg.decoupled_weight_decay)
    rng = np.random.default_rng(tcfg.seed)
    history = []
    best = (math.inf, -1, None)
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_samples))
        running = []
        for start in range(0, len(order), tcfg.batch_size):
            batch = [train_samples[i] for i in order[start:start + tcfg.batch_size]]
            opt.zero_grad()
            for s in batch:
                loss = sample_loss(params, cfg, s)
                lv = float(loss.data)
                if not math.isfinite(lv):
                    info = _dump_nan(out_dir, epoch, batch, params)
                    raise NumericError(f"non-finite loss at epoch {epoch}: {info}")
                running.append(lv)
                T.backward(T.scale(loss, 1.0 / len(batch)))
            for p in opt.params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            opt.step()
        train_loss = float(np.mean(running))
        val_loss = mean_loss(params, cfg, val_samples) if val_samples else train_loss
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
        if timing:
            row["seconds"] = round(time.perf_counter() - t0, 4)
        history.append(row)
        if log:
            log(row)
        if val_loss < best[0]:
            best = (val_loss, epoch, {k: v.data.copy() for k, v in params.items()})
    for k, v in best[2].items():
        params[k].data = v
    result = TrainResult(params, history, best[1], best[0])
    if out_dir is not None:
        save_checkpoint(params, cfg, out_dir)
        write_train_log(history, Path(out_dir) / "train_log.csv")
    return result


def write_train_log(history, path):
    fields = list(history[0].keys()) if history else ["epoch", "train_loss", "val_loss", "seconds"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in history:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def save_checkpoint(params, cfg: ModelConfig, directory):
    directory = Path(directory)
    T.save_params(params, directory / "params")
    (directory / "model_config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n")


def load_checkpoint(directory, expect: ModelConfig | None = None):
    directory = Path(directory)
    cpath = directory / "model_config.json"
    if not cpath.exists():
        raise FormatError(f"no model_config.json in {directory}")
    cfg = ModelConfig(**json.loads(cpath.read_text()))
    if expect is not None:
        for key in ("vocab_size", "d_model", "n_heads", "n_layers", "ffn_dim", "mok_projections"):
            if getattr(cfg, key) != getattr(expect, key):
                raise FormatError(f"checkpoint {key}={getattr(cfg, key)} incompatible with "
                                  f"requested {getattr(expect, key)}")
    params = T.load_params(directory / "params")
    wanted = init_params(cfg, 0)
    if set(wanted) != set(params) or any(wanted[k].shape != params[k].shape for k in wanted):
        raise FormatError(f"checkpoint parameters in {directory} do not match its config")
    return params, cfg


# ---- generation ----------------------------------------------------------

@dataclass
class GenerationOutput:
    token_ids: list[int]
    text: str
    log_probs: list[float]


def _log_softmax(v):
    m = v.max()
    return v - m - math.log(float(np.exp(v - m).sum()))


def generate(params, cfg: ModelConfig, F_I, K_c, K_t, vocab, decode=None, beam_width=None):
    """Greedy (argmax, lowest id on ties) or length-normalized beam search."""
    decode = decode or cfg.decode
    width = beam_width or cfg.beam_width
    with T.no_grad():
        memory = encode(params, cfg, mok_fuse(F_I, K_c, K_t, params))
        if decode == "greedy":
            ids, lps = _greedy(params, cfg, memory, vocab)
        else:
            ids, lps = _beam(params, cfg, memory, vocab, width)
    return GenerationOutput(ids, " ".join(vocab.decode(ids)), lps)


def _greedy(params, cfg, memory, vocab):
    prefix = [vocab.bos_index]
    ids, lps = [], []
    for _ in range(cfg.max_len + 1):
        lp = _log_softmax(decode_logits(params, cfg, memory, prefix).data[-1])
        tok = int(np.argmax(lp))
        ids.append(tok)
        lps.append(float(lp[tok]))
        if tok == vocab.eos_index:
            break
        prefix.append(tok)
    return ids, lps


def _beam(params, cfg, memory, vocab, width):
    alive = [([], [])]
    finished = []
    for _ in range(cfg.max_len + 1):
        cands = []
        for ids, lps in alive:
            lp = _log_softmax(decode_logits(params, cfg, memory, [vocab.bos_index] + ids).data[-1])
            for tok in range(len(lp)):
                total = sum(lps) + float(lp[tok])
                cands.append((-total / (len(ids) + 1), ids + [tok], lps + [float(lp[tok])]))
        cands.sort(key=lambda c: (c[0], c[1]))
        alive = []
        for _, ids, lps in cands[:width]:
            (finished if ids[-1] == vocab.eos_index else alive).append((ids, lps))
        if not alive or len(finished) >= width:
            break
    pool = finished + alive
    pool.sort(key=lambda h: (-sum(h[1]) / len(h[0]), h[0]))
    return pool[0]

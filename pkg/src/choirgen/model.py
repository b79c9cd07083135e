"""Three-head autoregressive chorale model.

Two bidirectional-LSTM encoders (soprano; beat/fermata/chord conditions)
read the whole piece. A per-frame dense decoder sees both encodings at frame
``t`` plus the embedded alto/tenor/bass tokens of frame ``t - 1`` and feeds
three softmax heads, one per generated voice.

Everything runs in float64 on the CPU so that gradients can be checked
against finite differences and saved models reload bit-for-bit.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import torch
from torch import nn

from choirgen.codec import START, VOCAB_SIZE, FrameSet
from choirgen.score import GENERATED_PARTS

log = logging.getLogger(__name__)

DTYPE = torch.float64
COND_DIM = 4 + 1 + 12  # beat one-hot, fermata bit, chromagram

MAGIC = b"CHGM"
FORMAT_VERSION = 1
DEFAULT_LR = 0.5


class ModelFormatError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 3
    hidden: int = 32
    dropout: float = 0.2
    embed_dim: int = 32
    use_chord: bool = True
    use_beat: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("blocks", "hidden", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def ablated(self) -> tuple[str, ...]:
        return tuple(n for n, used in (("chord", self.use_chord), ("beat", self.use_beat)) if not used)


class SequenceModel(Protocol):
    """Anything that can score a piece frame by frame.

    ``teacher_forced_probs`` returns an array of shape ``(3, T, 130)`` with
    the alto/tenor/bass distributions at every frame given the ground-truth
    prefix. ``context`` / ``step`` drive free-running generation.
    """

    config: ModelConfig

    def teacher_forced_probs(self, frames: FrameSet) -> np.ndarray: ...

    def context(self, frames: FrameSet) -> object: ...

    def step(self, context: object, t: int, previous: Sequence[int]) -> np.ndarray: ...


# -- layers ------------------------------------------------------------------------


class MaskedBatchNorm(nn.Module):
    """Batch normalization over the valid (unpadded) frames of a batch.

    Running statistics follow ``running = momentum * running + (1 - momentum)
    * batch`` and are used in eval mode.
    """

    def __init__(self, dim: int, momentum: float = 0.9, eps: float = 1e-3):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.track = True
        self.weight = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(dim, dtype=DTYPE))
        self.register_buffer("running_mean", torch.zeros(dim, dtype=DTYPE))
        self.register_buffer("running_var", torch.ones(dim, dtype=DTYPE))

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if self.training:
            sel = x[mask] if mask is not None else x.reshape(-1, x.shape[-1])
            mean = sel.mean(0)
            var = sel.var(0, unbiased=False)
            if self.track:
                with torch.no_grad():
                    self.running_mean.mul_(self.momentum).add_((1 - self.momentum) * mean)
                    self.running_var.mul_(self.momentum).add_((1 - self.momentum) * var)
        else:
            mean, var = self.running_mean, self.running_var
        return (x - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias


class EncoderBlock(nn.Module):
    def __init__(self, in_dim: int, hidden: int, dropout: float):
        super().__init__()
        self.forward_rnn = nn.LSTM(in_dim, hidden, batch_first=True, dtype=DTYPE)
        self.backward_rnn = nn.LSTM(in_dim, hidden, batch_first=True, dtype=DTYPE)
        self.dense = nn.Linear(2 * hidden, hidden, dtype=DTYPE)
        self.norm = MaskedBatchNorm(hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, reverse: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # The backward direction runs over each sequence reversed within its
        # own length, so trailing padding never leaks into valid frames.
        fwd, _ = self.forward_rnn(x)
        index = reverse.unsqueeze(-1).expand(-1, -1, x.shape[-1])
        bwd, _ = self.backward_rnn(x.gather(1, index))
        bwd = bwd.gather(1, reverse.unsqueeze(-1).expand(-1, -1, bwd.shape[-1]))
        out = torch.cat([fwd, bwd], dim=-1)
        return self.drop(self.norm(self.dense(out), mask))


class Encoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int, blocks: int, dropout: float):
        super().__init__()
        dims = [in_dim] + [hidden] * (blocks - 1)
        self.blocks = nn.ModuleList(EncoderBlock(d, hidden, dropout) for d in dims)

    def forward(self, x, reverse, mask):
        for block in self.blocks:
            x = block(x, reverse, mask)
        return x


class DecoderBlock(nn.Module):
    def __init__(self, in_dim: int, hidden: int, dropout: float):
        super().__init__()
        self.dense = nn.Linear(in_dim, hidden, dtype=DTYPE)
        self.norm = MaskedBatchNorm(hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        return self.drop(self.norm(torch.relu(self.dense(x)), mask))


@dataclass
class Batch:
    soprano: torch.Tensor  # (B, T) long
    conditions: torch.Tensor  # (B, T, COND_DIM)
    previous: torch.Tensor  # (B, T, 3) long, START at t=0
    targets: torch.Tensor | None  # (B, T, 3) long
    lengths: torch.Tensor  # (B,)
    mask: torch.Tensor  # (B, T) bool

    @property
    def reverse(self) -> torch.Tensor:
        """Per-row frame indices that reverse each sequence within its
        length and leave padding in place, shape ``(B, T)``."""
        T = self.mask.shape[1]
        t = torch.arange(T).expand(len(self.lengths), T)
        flipped = self.lengths.unsqueeze(1) - 1 - t
        return torch.where(t < self.lengths.unsqueeze(1), flipped, t)


def condition_features(frames: FrameSet, use_chord: bool = True, use_beat: bool = True) -> np.ndarray:
    n = frames.length
    feats = np.zeros((n, COND_DIM))
    if use_beat:
        feats[np.arange(n), np.asarray(frames.beat, dtype=np.int64)] = 1.0
    feats[:, 4] = np.asarray(frames.fermata, dtype=np.float64)
    if use_chord:
        chroma = np.asarray(frames.chord, dtype=np.int64)
        feats[:, 5:] = (chroma[:, None] >> np.arange(12)) & 1
    return feats


def make_batch(pieces: Sequence[FrameSet], config: ModelConfig, with_targets: bool = True) -> Batch:
    lengths = [p.length for p in pieces]
    T = max(lengths)
    B = len(pieces)
    soprano = torch.zeros((B, T), dtype=torch.long)
    conditions = torch.zeros((B, T, COND_DIM), dtype=DTYPE)
    previous = torch.full((B, T, 3), START, dtype=torch.long)
    targets = torch.zeros((B, T, 3), dtype=torch.long) if with_targets else None
    mask = torch.zeros((B, T), dtype=torch.bool)
    for i, p in enumerate(pieces):
        n = p.length
        soprano[i, :n] = torch.tensor(p.soprano)
        conditions[i, :n] = torch.from_numpy(condition_features(p, config.use_chord, config.use_beat))
        mask[i, :n] = True
        if with_targets:
            if not p.has_parts(GENERATED_PARTS):
                raise ValueError("training/evaluation pieces need alto, tenor and bass")
            atb = torch.tensor([p.alto, p.tenor, p.bass]).T
            targets[i, :n] = atb
            previous[i, 1:n] = atb[:-1]
    return Batch(soprano, conditions, previous, targets, torch.tensor(lengths), mask)


class ChoraleNet(nn.Module):
    """Reference network; see the module docstring for the layout."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        h, e = config.hidden, config.embed_dim
        # torch's default initializers draw from the global stream; keep it untouched
        with torch.random.fork_rng(devices=[]):
            self.soprano_embed = nn.Embedding(VOCAB_SIZE, e, dtype=DTYPE)
            self.token_embed = nn.Embedding(VOCAB_SIZE + 1, e, dtype=DTYPE)
            self.soprano_encoder = Encoder(e, h, config.blocks, config.dropout)
            self.condition_encoder = Encoder(COND_DIM, h, config.blocks, config.dropout)
            dims = [2 * h + 3 * e] + [h] * (config.blocks - 1)
            self.decoder = nn.ModuleList(DecoderBlock(d, h, config.dropout) for d in dims)
            self.heads = nn.ModuleList(nn.Linear(h, VOCAB_SIZE, dtype=DTYPE) for _ in GENERATED_PARTS)
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith("norm.weight"):
                    p.fill_(1.0)
                elif name.endswith("norm.bias"):
                    p.zero_()
                else:
                    fan_in = p.shape[-1] if p.dim() > 1 else self._fan_in(name, p)
                    bound = 1.0 / math.sqrt(fan_in)
                    p.copy_((torch.rand(p.shape, generator=g, dtype=DTYPE) * 2 - 1) * bound)

    def _fan_in(self, name: str, p: torch.Tensor) -> int:
        # biases share the fan-in of their weight matrix
        weight = dict(self.named_parameters())[name.replace("bias", "weight")]
        return weight.shape[-1]

    def zero_output_layers(self) -> None:
        with torch.no_grad():
            for head in self.heads:
                head.weight.zero_()
                head.bias.zero_()

    def encode(self, batch: Batch) -> torch.Tensor:
        reverse = batch.reverse
        s = self.soprano_encoder(self.soprano_embed(batch.soprano), reverse, batch.mask)
        c = self.condition_encoder(batch.conditions, reverse, batch.mask)
        return torch.cat([s, c], dim=-1)

    def decode(self, context: torch.Tensor, previous: torch.Tensor, mask=None) -> torch.Tensor:
        prev = self.token_embed(previous).flatten(-2)
        x = torch.cat([context, prev], dim=-1)
        for block in self.decoder:
            x = block(x, mask)
        return torch.stack([head(x) for head in self.heads])

    def forward(self, batch: Batch) -> torch.Tensor:
        """Teacher-forced logits, shape ``(3, B, T, 130)``."""
        return self.decode(self.encode(batch), batch.previous, batch.mask)


def sequence_loss(logits: torch.Tensor, batch: Batch) -> torch.Tensor:
    """Summed three-head cross-entropy, averaged over valid frames."""
    logp = torch.log_softmax(logits, dim=-1)
    targets = batch.targets.permute(2, 0, 1).unsqueeze(-1)
    nll = -logp.gather(-1, targets).squeeze(-1)  # (3, B, T)
    return (nll.sum(0) * batch.mask).sum() / batch.mask.sum()


# -- the model wrapper ---------------------------------------------------------------


class ChoraleModel:
    """Inference/training wrapper around :class:`ChoraleNet`."""

    def __init__(self, config: ModelConfig | None = None, net: ChoraleNet | None = None):
        self.config = config or ModelConfig()
        self.net = net or ChoraleNet(self.config)
        self.net.eval()

    def zero_output_layers(self) -> None:
        self.net.zero_output_layers()

    @torch.no_grad()
    def teacher_forced_probs(self, frames: FrameSet) -> np.ndarray:
        self.net.eval()
        batch = make_batch([frames], self.config)
        probs = torch.softmax(self.net(batch), dim=-1)[:, 0]
        return probs.numpy()

    @torch.no_grad()
    def context(self, frames: FrameSet) -> torch.Tensor:
        self.net.eval()
        batch = make_batch([frames], self.config, with_targets=False)
        return self.net.encode(batch)[0]

    @torch.no_grad()
    def step(self, context: torch.Tensor, t: int, previous: Sequence[int]) -> np.ndarray:
        """Distributions ``(3, 130)`` at frame ``t`` given the A/T/B tokens of
        frame ``t - 1`` (``START`` at ``t == 0``)."""
        self.net.eval()
        prev = torch.tensor([list(previous)], dtype=torch.long)
        logits = self.net.decode(context[t:t + 1], prev)[:, 0]
        return torch.softmax(logits, dim=-1).numpy()

    def predict_frame(self, frames: FrameSet, t: int, prefix: Sequence[Sequence[int]]) -> np.ndarray:
        return predict_frame(self, frames, t, prefix)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def predict_frame(
    model: SequenceModel,
    frames: FrameSet,
    t: int,
    prefix: Sequence[Sequence[int]],
) -> np.ndarray:
    """Alto/tenor/bass distributions at frame ``t``; ``prefix`` holds the
    three generated token sequences for frames ``< t``."""
    if not 0 <= t < frames.length:
        raise IndexError(f"frame {t} outside 0..{frames.length - 1}")
    if len(prefix) != 3 or any(len(p) < t for p in prefix):
        raise ValueError(f"prefix must hold three sequences covering frames < {t}")
    previous = [START] * 3 if t == 0 else [int(p[t - 1]) for p in prefix]
    return model.step(model.context(frames), t, previous)


# -- evaluation ----------------------------------------------------------------------


@dataclass(frozen=True)
class TERReport:
    alto: float
    tenor: float
    bass: float
    frames: int

    @property
    def mean(self) -> float:
        return (self.alto + self.tenor + self.bass) / 3

    def as_dict(self) -> dict[str, float]:
        return {"alto": self.alto, "tenor": self.tenor, "bass": self.bass, "mean": self.mean}


def token_error_rate(model: SequenceModel, corpus: Sequence[FrameSet]) -> TERReport:
    """Fraction of frames where the teacher-forced argmax differs from the
    ground-truth token, per generated voice."""
    if not corpus:
        raise ValueError("token_error_rate needs a nonempty corpus")
    errors = np.zeros(3)
    total = 0
    for frames in corpus:
        if not frames.has_parts(GENERATED_PARTS):
            raise ValueError("TER needs pieces with alto, tenor and bass")
        probs = model.teacher_forced_probs(frames)
        predicted = probs.argmax(-1)
        truth = np.array([frames.alto, frames.tenor, frames.bass])
        errors += (predicted != truth).sum(-1)
        total += frames.length
    a, t, b = errors / total
    return TERReport(float(a), float(t), float(b), total)


# -- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    train_ter: float | None = None
    validation_ter: float | None = None


@dataclass
class TrainReport:
    initial_loss: float
    epochs: list[EpochStats] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [e.loss for e in self.epochs]


def corpus_loss(model: ChoraleModel, corpus: Sequence[FrameSet]) -> float:
    """Mean per-frame loss in eval mode."""
    model.net.eval()
    with torch.no_grad():
        total = 0.0
        frames = 0
        for piece in corpus:
            batch = make_batch([piece], model.config)
            total += float(sequence_loss(model.net(batch), batch)) * piece.length
            frames += piece.length
    return total / frames


def split_corpus(corpus: Sequence, fraction: float = 0.1, seed: int = 0) -> tuple[list, list]:
    """Seeded shuffle, then hold out ``fraction`` (at least one piece) for
    validation. A single piece is used for both."""
    items = list(corpus)
    if not items:
        raise ValueError("cannot split an empty corpus")
    if len(items) == 1:
        return items, items
    order = np.random.default_rng(seed).permutation(len(items))
    n_val = max(1, int(round(fraction * len(items))))
    val = [items[i] for i in order[:n_val]]
    train = [items[i] for i in order[n_val:]]
    return train, val


def train(
    model: ChoraleModel,
    corpus: Sequence[FrameSet],
    epochs: int = 50,
    lr: float = DEFAULT_LR,
    batch_size: int = 4,
    validation: Sequence[FrameSet] | None = None,
    clip_norm: float = 5.0,
    track_train_ter: bool = False,
    seed: int | None = None,
) -> TrainReport:
    """Plain SGD with gradient-norm clipping on the teacher-forced loss.

    Dropout and batch normalization run in training mode only. Shuffling
    and dropout are driven by ``seed`` (default: the config seed), so runs
    are reproducible.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    for piece in corpus:
        piece.check()
    seed = model.config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    net = model.net
    opt = torch.optim.SGD(net.parameters(), lr=lr)
    report = TrainReport(initial_loss=corpus_loss(model, corpus))

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for epoch in range(epochs):
            net.train()
            order = rng.permutation(len(corpus))
            total = 0.0
            count = 0
            for start in range(0, len(order), batch_size):
                pieces = [corpus[i] for i in order[start:start + batch_size]]
                batch = make_batch(pieces, model.config)
                opt.zero_grad()
                loss = sequence_loss(net(batch), batch)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss {float(loss.detach())} at epoch {epoch}, batch starting {start}; "
                        f"lr={lr}, clip={clip_norm}"
                    )
                loss.backward()
                nn.utils.clip_grad_norm_(net.parameters(), clip_norm)
                opt.step()
                n = int(batch.mask.sum())
                total += float(loss.detach()) * n
                count += n
            net.eval()
            stats = EpochStats(
                epoch,
                total / count,
                token_error_rate(model, corpus).mean if track_train_ter else None,
                token_error_rate(model, validation).mean if validation else None,
            )
            log.info("epoch %d loss %.4f", epoch, stats.loss)
            report.epochs.append(stats)
    net.eval()
    return report


def gradient_check(
    model: ChoraleModel,
    corpus: Sequence[FrameSet],
    samples: int = 200,
    step: float = 1e-5,
    seed: int = 0,
) -> np.ndarray:
    """Relative errors between autograd gradients and central differences for
    ``samples`` randomly chosen scalar parameters. Dropout is disabled and
    batch statistics are frozen-free (train mode, no running updates)."""
    net = model.net
    batch = make_batch(list(corpus), model.config)
    drops = [m for m in net.modules() if isinstance(m, nn.Dropout)]
    norms = [m for m in net.modules() if isinstance(m, MaskedBatchNorm)]
    saved_p = [m.p for m in drops]
    for m in drops:
        m.p = 0.0
    for m in norms:
        m.track = False
    try:
        net.train()
        net.zero_grad()
        sequence_loss(net(batch), batch).backward()
        params = [p for p in net.parameters() if p.requires_grad]
        sizes = np.array([p.numel() for p in params])
        rng = np.random.default_rng(seed)
        flat_index = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
        offsets = np.cumsum(sizes) - sizes
        errors = []
        with torch.no_grad():
            for k in flat_index:
                which = int(np.searchsorted(offsets, k, side="right") - 1)
                p = params[which]
                i = int(k - offsets[which])
                analytic = float(p.grad.view(-1)[i])
                orig = float(p.view(-1)[i])
                p.view(-1)[i] = orig + step
                plus = float(sequence_loss(net(batch), batch))
                p.view(-1)[i] = orig - step
                minus = float(sequence_loss(net(batch), batch))
                p.view(-1)[i] = orig
                numeric = (plus - minus) / (2 * step)
                scale = max(abs(analytic), abs(numeric))
                errors.append(0.0 if scale == 0.0 else abs(analytic - numeric) / scale)
    finally:
        for m, p in zip(drops, saved_p):
            m.p = p
        for m in norms:
            m.track = True
        net.zero_grad()
        net.eval()
    return np.array(errors)


# -- persistence ---------------------------------------------------------------------


def save(model: ChoraleModel, path: str | Path) -> None:
    """Versioned binary: magic, version byte, JSON config, named float64
    tensors with shape headers, then a SHA-256 of everything before it."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", FORMAT_VERSION))
    cfg = json.dumps(asdict(model.config), sort_keys=True).encode()
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    state = model.net.state_dict()
    buf.write(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        raw = name.encode()
        arr = tensor.detach().cpu().numpy().astype("<f8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load(path: str | Path) -> ChoraleModel:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 1 or data[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version = data[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    body, digest = data[:-32], data[-32:]
    if len(data) < 32 + len(MAGIC) + 1 or hashlib.sha256(body).digest() != digest:
        raise ModelFormatError(f"{path}: checksum mismatch (file corrupt or truncated)")

    view = memoryview(body)
    pos = len(MAGIC) + 1

    def take(fmt: str):
        nonlocal pos
        values = struct.unpack_from(fmt, view, pos)
        pos += struct.calcsize(fmt)
        return values

    (n,) = take("<I")
    config = ModelConfig(**json.loads(bytes(view[pos:pos + n])))
    pos += n
    (count,) = take("<I")
    state = {}
    for _ in range(count):
        (n,) = take("<H")
        name = bytes(view[pos:pos + n]).decode()
        pos += n
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(view, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        state[name] = torch.from_numpy(arr.astype(np.float64))
    if pos != len(body):
        raise ModelFormatError(f"{path}: trailing bytes after tensors")
    model = ChoraleModel(config)
    model.net.load_state_dict(state)
    model.net.eval()
    return model

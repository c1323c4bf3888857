"""Pixel-loss pretraining, alternating WGAN-GP updates and S2AC checkpoints."""

from __future__ import annotations

import base64
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import evaluation
from .data import CropDataset
from .errors import (
    EmptyDataset,
    MagicMismatch,
    NonFiniteInput,
    NonFiniteLoss,
    TruncatedPayload,
    VersionMismatch,
)
from .losses import (
    LossReport,
    LossWeights,
    critic_objective,
    domain_adaptation_loss,
    generator_objective,
    gradient_penalty,
    pixel_loss,
    spatial_attention_loss,
)
from .model import (
    ATTENTION_VARIANTS,
    CONDITIONING_MODES,
    Discriminator,
    Generator,
    NetConfig,
    build_networks,
    spatial_attention,
)

log = logging.getLogger(__name__)

CKPT_MAGIC = b"S2AC"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    net: NetConfig = NetConfig()
    loss: LossWeights = LossWeights()
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    batch_size: int = 16
    pretrain_epochs: int = 2
    critic_updates_per_gen: int = 1
    steps: int = 0
    seed: int = 0
    attention_variant: str = "v3"
    conditioning: str = "concat"
    eval_every: int = 100
    checkpoint_every: int = 500
    val_batch_size: int = 32

    def __post_init__(self):
        if self.lr_g < 0 or self.lr_d < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.pretrain_epochs < 0 or self.steps < 0:
            raise ValueError("pretrain_epochs and steps must be nonnegative")
        if self.batch_size < 1 or self.critic_updates_per_gen < 1:
            raise ValueError("batch_size and critic_updates_per_gen must be >= 1")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ValueError(f"attention_variant must be one of {ATTENTION_VARIANTS}")
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning must be one of {CONDITIONING_MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        net = NetConfig.from_dict(d.pop("net", {}))
        loss = LossWeights(**d.pop("loss", {}))
        return cls(net=net, loss=loss, **d)


@dataclass(eq=False)
class TrainState:
    config: TrainConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    step: int = 0
    pretrain_step: int = 0
    pretrain_done: bool = False
    critic_updates: int = 0
    generator_updates: int = 0
    best: dict = field(default_factory=dict)


def init_state(config: TrainConfig) -> TrainState:
    gen, disc = build_networks(config.net, config.conditioning, config.seed)
    return TrainState(
        config=config,
        generator=gen,
        discriminator=disc,
        opt_g=torch.optim.Adam(gen.parameters(), lr=config.lr_g, betas=(config.beta1, config.beta2)),
        opt_d=torch.optim.Adam(disc.parameters(), lr=config.lr_d, betas=(config.beta1, config.beta2)),
        rng=torch.Generator().manual_seed(config.seed),
    )


def batch_indices(n: int, batch_size: int, seed: int, step: int, salt: int = 0) -> np.ndarray:
    """Indices of the ``step``-th batch: a fresh permutation per epoch, last partial batch dropped."""
    if n == 0:
        raise EmptyDataset("no crops to sample from")
    bs = min(batch_size, n)
    per_epoch = n // bs
    epoch, pos = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, salt, epoch]).permutation(n)
    return perm[pos * bs : (pos + 1) * bs]


class TensorData:
    """Crop arrays as tensors for fast batch gathering."""

    def __init__(self, data: CropDataset):
        if len(data) == 0:
            raise EmptyDataset(f"{data.split} dataset is empty")
        z, y, yt = data.arrays()
        self.z = torch.from_numpy(z)
        self.y = torch.from_numpy(y)
        self.yt = torch.from_numpy(yt)

    def __len__(self):
        return self.z.shape[0]

    def batch(self, idx):
        idx = torch.as_tensor(idx, dtype=torch.long)
        return self.z[idx], self.y[idx], self.yt[idx]


def _as_tensors(data) -> TensorData:
    return data if isinstance(data, TensorData) else TensorData(data)


def _set_requires_grad(module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


@torch.no_grad()
def conditioning_maps(disc: Discriminator, y_tilde: torch.Tensor, variant: str, batch_size: int = 64):
    out = []
    for i in range(0, y_tilde.shape[0], batch_size):
        _, taps = disc(y_tilde[i : i + batch_size])
        out.append(spatial_attention(taps, variant))
    return torch.cat(out)


@torch.no_grad()
def predict(state: TrainState, z, y_tilde, batch_size: int | None = None) -> torch.Tensor:
    """Generator output for stacked crops, conditioned on A_s(y_tilde)."""
    cfg = state.config
    bs = batch_size or cfg.val_batch_size
    outs = []
    for i in range(0, z.shape[0], bs):
        a = conditioning_maps(state.discriminator, y_tilde[i : i + bs], cfg.attention_variant, bs)
        outs.append(state.generator(z[i : i + bs], a))
    return torch.cat(outs)


def validate(state: TrainState, val) -> dict:
    val = _as_tensors(val)
    pred = predict(state, val.z, val.yt).double().numpy()
    gt = val.y.double().numpy()
    clipped = np.clip(pred, 0.0, 1.0)
    return {
        "pixel": float(np.mean((pred - gt) ** 2)),
        "sre_db": evaluation.sre(clipped, gt),
        "rmse": evaluation.rmse(clipped, gt),
    }


def pretrain_generator(config: TrainConfig, train_data, val_data=None, state: TrainState | None = None, history=None):
    """Pixel-loss-only updates of the generator with the critic frozen at its current weights."""
    state = state or init_state(config)
    train = _as_tensors(train_data)
    val = _as_tensors(val_data) if val_data is not None else None
    history = history if history is not None else []
    gen, disc = state.generator, state.discriminator
    cfg = state.config

    if val is not None:
        history.append({"phase": "pretrain", "epoch": 0, **validate(state, val)})
    if cfg.pretrain_epochs == 0:
        state.pretrain_done = True
        return state

    maps = conditioning_maps(disc, train.yt, cfg.attention_variant)
    bs = min(cfg.batch_size, len(train))
    per_epoch = len(train) // bs
    total = cfg.pretrain_epochs * per_epoch
    while state.pretrain_step < total:
        idx = batch_indices(len(train), bs, cfg.seed, state.pretrain_step, salt=1)
        z, y, _ = train.batch(idx)
        xhat = gen(z, maps[torch.as_tensor(idx)])
        loss = pixel_loss(xhat, y)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"pixel loss diverged at pretrain step {state.pretrain_step}")
        state.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        state.opt_g.step()
        state.pretrain_step += 1
        if state.pretrain_step % per_epoch == 0 and val is not None:
            epoch = state.pretrain_step // per_epoch
            rec = {"phase": "pretrain", "epoch": epoch, **validate(state, val)}
            history.append(rec)
            log.info("pretrain epoch %d: val pixel %.6f sre %.2f dB", epoch, rec["pixel"], rec["sre_db"])
    state.pretrain_done = True
    return state


def adversarial_step(state: TrainState, batch) -> LossReport:
    """One critic update followed by one generator update; mutates ``state``."""
    cfg = state.config
    w = cfg.loss
    gen, disc = state.generator, state.discriminator
    z, y, yt = batch
    variant = cfg.attention_variant

    for _ in range(cfg.critic_updates_per_gen):
        with torch.no_grad():
            xhat = gen(z, conditioning_maps(disc, yt, variant))
        d_real, taps_real = disc(y)
        d_fake, taps_fake = disc(xhat)
        _, taps_up = disc(yt)
        a_real = spatial_attention(taps_real, variant)
        a_fake = spatial_attention(taps_fake, variant)
        a_up = spatial_attention(taps_up, variant)
        eps = torch.rand(y.shape[0], generator=state.rng)
        gp, norms = gradient_penalty(disc.score, y, xhat, eps, return_norms=True)
        l_sa = spatial_attention_loss(a_fake, a_real)
        l_da = domain_adaptation_loss(a_up, a_real)
        try:
            d_loss = critic_objective(d_real, d_fake, gp, l_sa, l_da, w)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(f"critic objective diverged at step {state.step}") from exc
        state.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        state.opt_d.step()
        state.critic_updates += 1

    a_cond = conditioning_maps(disc, yt, variant)
    _set_requires_grad(disc, False)
    try:
        xhat = gen(z, a_cond)
        d_gen = disc.score(xhat)
        l_pix = pixel_loss(xhat, y)
        g_loss = -d_gen.mean() + w.lambda_p * l_pix
        report = LossReport(
            step=state.step,
            wasserstein_gap=(d_real.mean() - d_fake.mean()).item(),
            gp=gp.item(),
            sa=l_sa.item(),
            da=l_da.item(),
            pixel=l_pix.item(),
            critic_total=d_loss.item(),
            generator_adv=-d_gen.mean().item(),
            generator_total=g_loss.item(),
            grad_norm=norms.mean().item(),
        )
        if not report.is_finite():
            raise NonFiniteLoss(f"non-finite loss at step {state.step}: {report.to_json()}", report)
        state.opt_g.zero_grad(set_to_none=True)
        g_loss.backward()
        state.opt_g.step()
    finally:
        _set_requires_grad(disc, True)
    state.generator_updates += 1
    state.step += 1
    return report


def train(
    config: TrainConfig,
    train_data,
    val_data=None,
    out_dir=None,
    state: TrainState | None = None,
    callback=None,
):
    """Pretrain, then run adversarial steps until ``config.steps``.

    Returns ``(state, history)``. With ``out_dir`` set, writes ``train_log.jsonl``,
    periodic ``ckpt_XXXXXX.s2ac`` files, ``best.s2ac`` (highest validation SRE)
    and ``final.s2ac``. Passing a loaded ``state`` resumes where it stopped.
    """
    state = state or init_state(config)
    if state.config != config:
        state.config = config
    history: list[dict] = []
    train_t = _as_tensors(train_data)
    val_t = _as_tensors(val_data) if val_data is not None else None
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "a", encoding="utf-8")

    def emit(rec):
        history.append(rec)
        if log_fh is not None:
            log_fh.write(json.dumps(rec) + "\n")
            log_fh.flush()

    try:
        if not state.pretrain_done:
            pre_hist = []
            pretrain_generator(config, train_t, val_t, state=state, history=pre_hist)
            for rec in pre_hist:
                emit(rec)
            if out is not None:
                save_checkpoint(state, out / "pretrain.s2ac")

        bs = min(config.batch_size, len(train_t))
        while state.step < config.steps:
            idx = batch_indices(len(train_t), bs, config.seed, state.step, salt=2)
            report = adversarial_step(state, train_t.batch(idx))
            emit(asdict(report))
            if callback is not None:
                callback(state, report)
            if val_t is not None and state.step % config.eval_every == 0:
                rec = {"phase": "validation", "step": state.step, **validate(state, val_t)}
                emit(rec)
                if rec["sre_db"] > state.best.get("sre_db", -math.inf):
                    state.best = {"sre_db": rec["sre_db"], "step": state.step}
                    if out is not None:
                        save_checkpoint(state, out / "best.s2ac")
            if out is not None and state.step % config.checkpoint_every == 0:
                save_checkpoint(state, out / f"ckpt_{state.step:06d}.s2ac")
        if out is not None:
            save_checkpoint(state, out / "final.s2ac")
    finally:
        if log_fh is not None:
            log_fh.close()
    return state, history


# --- S2AC checkpoints ------------------------------------------------------------
#
# b"S2AC" | u32 version | u32 header length | JSON header (config, counters,
# RNG state) | u32 entry count | per entry: u16 name length, UTF-8 name,
# u32 ndim, ndim x u32 dims, little-endian float32 payload.

def _named_tensors(state: TrainState):
    for prefix, module in (("generator", state.generator), ("discriminator", state.discriminator)):
        for name, p in module.named_parameters():
            yield f"{prefix}.{name}", p.detach()
    for prefix, module, opt in (
        ("opt_g", state.generator, state.opt_g),
        ("opt_d", state.discriminator, state.opt_d),
    ):
        for name, p in module.named_parameters():
            st = opt.state.get(p)
            if not st:
                continue
            for key in ("step", "exp_avg", "exp_avg_sq"):
                yield f"{prefix}.{name}.{key}", torch.as_tensor(st[key], dtype=torch.float32)


def save_checkpoint(state: TrainState, path) -> None:
    header = {
        "config": state.config.to_dict(),
        "step": state.step,
        "pretrain_step": state.pretrain_step,
        "pretrain_done": state.pretrain_done,
        "critic_updates": state.critic_updates,
        "generator_updates": state.generator_updates,
        "best": state.best,
        "rng_state": base64.b64encode(state.rng.get_state().numpy().tobytes()).decode("ascii"),
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(hdr)), hdr]
    entries = list(_named_tensors(state))
    parts.append(struct.pack("<I", len(entries)))
    for name, t in entries:
        arr = t.numpy().astype("<f4")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInput(f"refusing to checkpoint non-finite tensor {name}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedPayload("checkpoint truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse an S2AC file into its header and a name -> float32 array table."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != CKPT_MAGIC:
        raise MagicMismatch("not an S2AC checkpoint")
    version, hlen = r.unpack("<II")
    if version != CKPT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CKPT_VERSION}")
    header = json.loads(r.take(hlen).decode("utf-8"))
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).copy()
    return header, tensors


def load_checkpoint(path, expected_net: NetConfig | None = None) -> TrainState:
    header, tensors = read_checkpoint(path)
    config = TrainConfig.from_dict(header["config"])
    if expected_net is not None and expected_net != config.net:
        raise VersionMismatch(f"checkpoint NetConfig {config.net} differs from expected {expected_net}")
    state = init_state(config)
    try:
        for prefix, module in (("generator", state.generator), ("discriminator", state.discriminator)):
            with torch.no_grad():
                for name, p in module.named_parameters():
                    arr = tensors[f"{prefix}.{name}"]
                    if tuple(arr.shape) != tuple(p.shape):
                        raise VersionMismatch(f"{prefix}.{name}: shape {arr.shape} vs {tuple(p.shape)}")
                    p.copy_(torch.from_numpy(arr))
        for prefix, module, opt in (
            ("opt_g", state.generator, state.opt_g),
            ("opt_d", state.discriminator, state.opt_d),
        ):
            for name, p in module.named_parameters():
                key = f"{prefix}.{name}.step"
                if key not in tensors:
                    continue
                opt.state[p] = {
                    "step": torch.tensor(float(tensors[key]), dtype=torch.float32),
                    "exp_avg": torch.from_numpy(tensors[f"{prefix}.{name}.exp_avg"]),
                    "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}.{name}.exp_avg_sq"]),
                }
    except KeyError as exc:
        raise VersionMismatch(f"checkpoint lacks tensor {exc}") from None
    state.step = header["step"]
    state.pretrain_step = header["pretrain_step"]
    state.pretrain_done = header["pretrain_done"]
    state.critic_updates = header["critic_updates"]
    state.generator_updates = header["generator_updates"]
    state.best = header.get("best", {})
    rng_bytes = base64.b64decode(header["rng_state"])
    state.rng.set_state(torch.from_numpy(np.frombuffer(rng_bytes, dtype=np.uint8).copy()))
    return state


def state_tensors(state: TrainState) -> dict[str, np.ndarray]:
    """Flat copy of every checkpointed tensor, for comparisons."""
    return {name: t.numpy().copy() for name, t in _named_tensors(state)}

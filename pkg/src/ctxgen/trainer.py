"""Joint training of context encoder and generator, checkpoints, and sampling.

The generator-side objective is ``L_gen + lambda * L_aux`` where ``L_aux``
is the context reconstruction loss of the encoder heads. For GANs the
discriminator is stepped on its own loss and never backpropagates into the
context encoder.
"""

from __future__ import annotations

import dataclasses
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .context_encoder import ContextEncoder, aux_loss, reconstruction_accuracy
from .data import Dataset, DataError, TIME_VARIABLES, canonical_date, ContextVocabulary
from .generators import (
    DiffusionModel, GanModel, diffusion_loss, diffusion_sample, discriminator_loss,
    generator_adversarial_loss,
)
from .generators.noise import assemble_conditioned_noise, split_conditioned_grad
from .normalizer import (
    DELTA, NormalizerModel, compute_group_stats, denormalize_batch, normalize_batch,
    stats_training_set, train_normalizer,
)
from .numerics import Adam, ConfigurationError, Module, NonFiniteError, Rng

MODEL_KINDS = ("baseline", "acgan", "diffusion")
LOG_COLUMNS = ("epoch", "loss_gen", "loss_aux", "loss_total")


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    model: str = "diffusion"
    lambda_aux: float = 0.1
    gamma: float = 1.0
    lambda_gen: float = 1.0
    epochs: int = 200
    batch_size: int = 128
    sampling_batch_size: int = 4096
    gen_lr: float = 3e-4
    disc_lr: float = 1e-4
    diffusion_lr: float = 1e-3
    diffusion_min_lr: float = 1e-4
    grad_accum: int = 1
    T_steps: int = 100
    beta_schedule: str = "cosine"
    lambda1: float = 1.0
    lambda2: float = 0.1
    loss_type: str = "l1"
    ema_decay: float = 0.99
    noise_dim: int = 64
    embed_dim: int = 16
    d_h: int = 16
    encoder_hidden: tuple = (128, 128)
    head_hidden: int = 64
    gen_widths: tuple = (64, 32, 16)
    disc_widths: tuple = (16, 32, 64)
    hidden: int = 128
    n_blocks: int = 2
    top_k: int = 3
    trend_degree: int = 3
    normalizer_steps: int = 1500
    normalizer_lr: float = 3e-3
    seed: int = 0
    preset: str = "desk"
    profiles: str = ""
    metadata: str = ""

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigurationError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.lambda_aux < 0 or self.gamma < 0 or self.lambda_gen < 0:
            raise ConfigurationError("loss weights lambda_aux, gamma, lambda_gen must be >= 0")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 2 or self.grad_accum < 1:
            raise ConfigurationError("batch_size must be >= 2 and grad_accum >= 1")
        if self.beta_schedule != "cosine":
            raise ConfigurationError(f"unsupported beta schedule {self.beta_schedule!r}")
        if self.T_steps < 2:
            raise ConfigurationError("T_steps must be >= 2")
        if min(self.gen_lr, self.disc_lr, self.diffusion_lr) <= 0 or self.diffusion_min_lr < 0:
            raise ConfigurationError("learning rates must be positive")
        if not 0 <= self.ema_decay < 1:
            raise ConfigurationError("ema_decay must lie in [0, 1)")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(names))
        if unknown:
            raise ConfigurationError(f"unknown training option(s): {unknown}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


# Appendix-table values for full-scale runs. The MLP denoiser width mirrors
# the reference model dimension and its depth the decoder layer count.
PRESETS = {
    "desk": {},
    "paper": {
        "noise_dim": 256,
        "embed_dim": 16,
        "d_h": 16,
        "batch_size": 1024,
        "sampling_batch_size": 4096,
        "epochs": 5000,
        "gen_lr": 3e-4,
        "disc_lr": 1e-4,
        "diffusion_lr": 1e-4,
        "diffusion_min_lr": 1e-5,
        "T_steps": 1000,
        "beta_schedule": "cosine",
        "ema_decay": 0.99,
        "loss_type": "l1",
        "grad_accum": 2,
        "lambda_aux": 0.1,
        "gen_widths": (256, 128, 64),
        "disc_widths": (64, 128, 256),
        "hidden": 128,
        "n_blocks": 5,
    },
}


def preset_config(name: str = "desk", **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[name])
    values.update(overrides)
    values["preset"] = name
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


@dataclass
class Checkpoint:
    config: TrainConfig
    vocabulary: ContextVocabulary
    T: int
    d: int
    channels: tuple
    encoder: ContextEncoder
    generator: Module
    normalizer: NormalizerModel
    log: list = field(default_factory=list)
    rng_state: int = 0

    def log_csv(self) -> str:
        cols = list(LOG_COLUMNS) + (["loss_disc"] if self.config.model != "diffusion" else [])
        lines = [",".join(cols)]
        for row in self.log:
            lines.append(",".join(str(row[c]) if c == "epoch" else repr(float(row[c])) for c in cols))
        return "\n".join(lines) + "\n"


def _name_parameters(module: Module, prefix: str) -> None:
    for k, p in module.named_parameters():
        p.name = f"{prefix}.{k}"


def build_models(config: TrainConfig, cardinalities, T: int, d: int, rng: Rng):
    encoder = ContextEncoder(cardinalities, rng.spawn(1), config.embed_dim, config.d_h,
                             config.encoder_hidden, config.head_hidden)
    grng = rng.spawn(2)
    if config.model == "diffusion":
        gen = DiffusionModel(T, d, config.d_h, grng, config.T_steps, config.hidden, config.n_blocks,
                             trend_degree=config.trend_degree, top_k=config.top_k,
                             lambda1=config.lambda1, lambda2=config.lambda2,
                             loss_type=config.loss_type, ema_decay=config.ema_decay)
    else:
        gen = GanModel(T, d, cardinalities, config.d_h, grng, config.noise_dim,
                       gen_widths=config.gen_widths, disc_widths=config.disc_widths,
                       is_acgan=config.model == "acgan")
    _name_parameters(encoder, "encoder")
    _name_parameters(gen, "generator")
    return encoder, gen


def _batches(perm: np.ndarray, batch_size: int) -> list[np.ndarray]:
    # near-equal splits keep every batch >= 2 for batch norm
    n_batches = max(1, math.ceil(len(perm) / batch_size))
    return [b for b in np.array_split(perm, n_batches) if len(b)]


def _cosine_lr(base: float, floor: float, step: int, total: int) -> float:
    if total <= 1 or floor >= base:
        return base
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * min(step, total - 1) / (total - 1)))


def _aux_backward(encoder: ContextEncoder, h, codes, lam: float):
    """L_aux value and its lambda-weighted gradient wrt h (exactly zero for lambda = 0)."""
    logits, caches = encoder.reconstruct(h)
    value, dlogits = aux_loss(logits, codes)
    dh = encoder.reconstruct_backward([lam * g for g in dlogits], caches)
    return value, dh


def normalized_training_series(dataset: Dataset, delta: float = DELTA):
    """Series normalised with their own group's true statistics, plus the group stats."""
    stats = compute_group_stats(dataset, delta)
    vectors = np.stack([stats[k].as_vector() for k in dataset.combination_keys()])
    return normalize_batch(dataset.series, vectors, delta), stats


def fit_normalizer(dataset: Dataset, config: TrainConfig) -> NormalizerModel:
    codes, targets = stats_training_set(compute_group_stats(dataset))
    model, _ = train_normalizer(codes, targets, dataset.vocabulary.cardinalities, dataset.d,
                                seed=config.seed, steps=config.normalizer_steps, lr=config.normalizer_lr)
    return model


def initial_checkpoint(config: TrainConfig, dataset: Dataset,
                       normalizer: NormalizerModel | None = None) -> Checkpoint:
    """The untrained models :func:`train` starts from (same seeds, fitted normalizer)."""
    config.validate()
    if normalizer is None:
        normalizer = fit_normalizer(dataset, config)
    encoder, gen = build_models(config, dataset.vocabulary.cardinalities, dataset.T, dataset.d,
                                Rng(config.seed).spawn(10))
    if isinstance(gen, DiffusionModel):
        gen.init_ema()
    return Checkpoint(config, dataset.vocabulary, dataset.T, dataset.d, tuple(dataset.channels),
                      encoder, gen, normalizer)


def train(config: TrainConfig, dataset: Dataset, normalizer: NormalizerModel | None = None,
          progress=None) -> Checkpoint:
    """Train encoder + generator on ``dataset``; returns a :class:`Checkpoint`.

    ``progress`` is called with each epoch's log row when given.
    """
    config.validate()
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    if len(dataset) < 2:
        raise DataError("training needs at least 2 profiles")
    root = Rng(config.seed)
    ckpt = initial_checkpoint(config, dataset, normalizer)
    x_all, _ = normalized_training_series(dataset)
    codes_all = dataset.codes
    batch_rng, step_rng = root.spawn(11), root.spawn(12)
    if config.model == "diffusion":
        _train_diffusion(config, ckpt, x_all, codes_all, batch_rng, step_rng, progress)
    else:
        _train_gan(config, ckpt, x_all, codes_all, batch_rng, step_rng, progress)
    ckpt.rng_state = int(step_rng.state)
    return ckpt


def _check_finite(value: float, epoch: int, batch: int, what: str) -> None:
    if not np.isfinite(value):
        raise TrainingError(f"non-finite {what} ({value}) at epoch {epoch}, batch {batch}")


def _train_diffusion(config, ckpt, x_all, codes_all, batch_rng, step_rng, progress):
    encoder, model = ckpt.encoder, ckpt.generator
    params = model.parameters() + encoder.parameters()
    opt = Adam(params, config.diffusion_lr)
    n = len(x_all)
    n_batches = len(_batches(np.arange(n), config.batch_size))
    total_steps = config.epochs * math.ceil(n_batches / config.grad_accum)
    lam, step = config.lambda_aux, 0
    model.init_ema()
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        batches = _batches(batch_rng.permutation(n), config.batch_size)
        pending = 0
        for b, idx in enumerate(batches):
            x0, codes = x_all[idx], codes_all[idx]
            B = len(idx)
            try:
                h, hcache = encoder.encode(codes)
                t = step_rng.integers(config.T_steps, B) + 1
                noise = step_rng.normal((B, ckpt.T, ckpt.d))
                l_gen, dh = diffusion_loss(model, x0, h, t, noise)
                l_aux, dh_aux = _aux_backward(encoder, h, codes, lam)
                encoder.encode_backward(dh + dh_aux, hcache)
            except NonFiniteError as err:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b}: {err}") from err
            total = l_gen + lam * l_aux
            _check_finite(total, epoch, b, "total loss")
            sums += (l_gen, l_aux, total)
            pending += 1
            if pending == config.grad_accum or b == len(batches) - 1:
                if pending > 1:
                    for p in params:
                        p.grad /= pending
                opt.lr = _cosine_lr(config.diffusion_lr, config.diffusion_min_lr, step, total_steps)
                try:
                    opt.step()
                except NonFiniteError as err:
                    raise TrainingError(f"epoch {epoch}, batch {b}: {err}") from err
                model.update_ema()
                step += 1
                pending = 0
        row = {"epoch": epoch, **dict(zip(LOG_COLUMNS[1:], (sums / len(batches)).tolist()))}
        ckpt.log.append(row)
        if progress:
            progress(row)


def _train_gan(config, ckpt, x_all, codes_all, batch_rng, step_rng, progress):
    encoder, model = ckpt.encoder, ckpt.generator
    gen, disc = model.generator, model.discriminator
    gen_opt = Adam(gen.parameters() + encoder.parameters(), config.gen_lr)
    disc_opt = Adam(disc.parameters(), config.disc_lr)
    n, lam = len(x_all), config.lambda_aux
    model.train()
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(4)
        batches = _batches(batch_rng.permutation(n), config.batch_size)
        for b, idx in enumerate(batches):
            real, codes = x_all[idx], codes_all[idx]
            try:
                h, hcache = encoder.encode(codes)
                z = model.sample_noise(step_rng, len(idx))
                z_star = assemble_conditioned_noise(z, h)
                fake, gcache = gen.forward(z_star)
                # discriminator step on the detached fake batch
                disc.zero_grad()
                l_disc = discriminator_loss(model, real, fake, codes, gamma=config.gamma)
                disc_opt.step()
                l_gen, dfake = generator_adversarial_loss(model, fake, codes, config.lambda_gen)
                disc.zero_grad()
                dz_star = gen.backward(dfake, gcache)
                _, dh = split_conditioned_grad(dz_star, model.noise_dim)
                l_aux, dh_aux = _aux_backward(encoder, h, codes, lam)
                encoder.encode_backward(dh + dh_aux, hcache)
                gen_opt.step()
            except NonFiniteError as err:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b}: {err}") from err
            total = l_gen + lam * l_aux
            _check_finite(total, epoch, b, "total loss")
            sums += (l_gen, l_aux, total, l_disc)
        row = {"epoch": epoch, **dict(zip(LOG_COLUMNS[1:] + ("loss_disc",), (sums / len(batches)).tolist()))}
        ckpt.log.append(row)
        if progress:
            progress(row)


# -- generation ----------------------------------------------------------------

def sample_normalized(ckpt: Checkpoint, codes, seed: int = 0) -> np.ndarray:
    """Normalised samples (n, T, d) in [0, 1] for integer context codes (n, N)."""
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    ckpt.vocabulary.validate(codes)
    h = ckpt.encoder.embed(codes)
    rng = Rng(seed)
    chunk = max(1, int(ckpt.config.sampling_batch_size))
    out = []
    model = ckpt.generator
    if isinstance(model, DiffusionModel):
        for s in range(0, len(codes), chunk):
            out.append(diffusion_sample(model, h[s:s + chunk], rng=rng))
    else:
        was_training = model.training
        model.eval()
        try:
            for s in range(0, len(codes), chunk):
                hb = h[s:s + chunk]
                z = model.sample_noise(rng, len(hb))
                out.append(model.generator.forward(assemble_conditioned_noise(z, hb))[0])
        finally:
            model.train(was_training)
    return np.concatenate(out, axis=0)


def generate_dataset(ckpt: Checkpoint, codes, per_context: int = 1, seed: int = 0,
                     dates=None) -> Dataset:
    """Synthetic kWh-scale dataset for the requested contexts.

    Each row of ``codes`` is repeated ``per_context`` times. Dates default
    to the first date of the context's month and weekday.
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    if per_context < 1:
        raise ValueError("per_context must be >= 1")
    try:
        ckpt.vocabulary.validate(codes)
    except DataError as err:
        raise DataError(f"invalid context codes: {err}") from None
    reps = np.repeat(codes, per_context, axis=0)
    z = sample_normalized(ckpt, reps, seed)
    stats = ckpt.normalizer.predict(reps)
    series = denormalize_batch(z, stats, ckpt.normalizer.delta)
    if not np.all(np.isfinite(series)):
        raise TrainingError("generated series contain non-finite values")
    if dates is None:
        names = ckpt.vocabulary.names
        if all(v in names for v in TIME_VARIABLES):
            mi, wi = names.index("month"), names.index("weekday")
            dates = [canonical_date(int(c[mi]), int(c[wi])) for c in reps]
        else:
            dates = [canonical_date(0, 0)] * len(reps)
    else:
        dates = [d for d in dates for _ in range(per_context)]
    ids = [f"syn{i:06d}" for i in range(len(reps))]
    return Dataset(series, reps, ckpt.vocabulary, ids, dates, ckpt.channels)


def aux_accuracy(ckpt: Checkpoint, codes) -> float:
    return reconstruction_accuracy(ckpt.encoder, codes)


# -- checkpoint format -----------------------------------------------------------
#
# b"CNTS" | u32 version | u32 section count | sections...
# section: u16 name length | name (utf-8) | u8 kind | u64 payload length | payload
#   kind 0: utf-8 JSON
#   kind 1: u8 ndim | ndim x u64 dims | little-endian float64 data
# All integers little-endian.

MAGIC = b"CNTS"
FORMAT_VERSION = 1


def _array_payload(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    head = struct.pack("<B", a.ndim) + b"".join(struct.pack("<Q", s) for s in a.shape)
    return head + a.tobytes()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    meta = {
        "config": ckpt.config.to_dict(),
        "vocabulary": ckpt.vocabulary.to_json(),
        "T": ckpt.T,
        "d": ckpt.d,
        "channels": list(ckpt.channels),
        "log": ckpt.log,
        "rng_state": int(ckpt.rng_state),
        "normalizer": {"embed_dim": ckpt.normalizer.embeddings[0].table.value.shape[1],
                       "hidden": ckpt.normalizer.net.layers[0].weight.value.shape[1],
                       "delta": ckpt.normalizer.delta},
    }
    sections = [("meta", 0, json.dumps(meta, sort_keys=True).encode())]
    for prefix, module in (("encoder", ckpt.encoder), ("generator", ckpt.generator),
                           ("normalizer", ckpt.normalizer)):
        for k, v in module.state_dict().items():
            sections.append((f"{prefix}/{k}", 1, _array_payload(v)))
    ema = getattr(ckpt.generator, "ema", None)
    if ema is not None:
        for k, v in ema.items():
            sections.append((f"ema/{k}", 1, _array_payload(v)))
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(sections)))
    for name, kind, payload in sections:
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb + struct.pack("<BQ", kind, len(payload)))
        buf.write(payload)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated checkpoint while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_checkpoint(data: bytes, source: str = "checkpoint") -> dict:
    """Raw sections: {'meta': dict, name: ndarray, ...}."""
    r = _Reader(data, source)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version, count = r.unpack("<II", "header")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{source}: checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        )
    sections = {}
    for i in range(count):
        (name_len,) = r.unpack("<H", f"section {i} name length")
        name = r.take(name_len, f"section {i} name").decode()
        kind, length = r.unpack("<BQ", f"section {name!r} header")
        payload = r.take(length, f"section {name!r}")
        if kind == 0:
            sections[name] = json.loads(payload.decode())
        elif kind == 1:
            pr = _Reader(payload, f"{source} section {name!r}")
            (ndim,) = pr.unpack("<B", "ndim")
            shape = pr.unpack(f"<{ndim}Q", "shape") if ndim else ()
            raw = pr.take(8 * int(np.prod(shape, dtype=np.int64)), "data")
            if pr.pos != len(payload):
                raise CheckpointError(f"{source}: section {name!r} has trailing bytes")
            sections[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
        else:
            raise CheckpointError(f"{source}: section {name!r} has unknown kind {kind}")
    if r.pos != len(data):
        raise CheckpointError(f"{source}: trailing bytes after {count} sections")
    if "meta" not in sections:
        raise CheckpointError(f"{source}: missing meta section")
    return sections


def checkpoint_from_bytes(data: bytes, source: str = "checkpoint") -> Checkpoint:
    sections = parse_checkpoint(data, source)
    meta = sections["meta"]
    config = TrainConfig.from_dict(meta["config"])
    vocab = ContextVocabulary.from_json(meta["vocabulary"])
    T, d = int(meta["T"]), int(meta["d"])
    encoder, gen = build_models(config, vocab.cardinalities, T, d, Rng(0))
    nm = meta["normalizer"]
    normalizer = NormalizerModel(vocab.cardinalities, d, Rng(0), nm["embed_dim"], nm["hidden"], nm["delta"])
    for prefix, module in (("encoder", encoder), ("generator", gen), ("normalizer", normalizer)):
        state = {k[len(prefix) + 1:]: v for k, v in sections.items() if k.startswith(prefix + "/")}
        try:
            module.load_state_dict(state)
        except (KeyError, ValueError) as err:
            raise CheckpointError(f"{source}: {prefix} state does not match its config: {err}") from None
    ema = {k[4:]: v for k, v in sections.items() if k.startswith("ema/")}
    if ema:
        gen.ema = ema
    return Checkpoint(config, vocab, T, d, tuple(meta["channels"]), encoder, gen, normalizer,
                      meta["log"], int(meta["rng_state"]))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    return checkpoint_from_bytes(path.read_bytes(), str(path))


def write_log_csv(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(ckpt.log_csv())
    tmp.replace(path)

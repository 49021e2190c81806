"""The two experiments: adversarial image generation under the
critic-heavy training schedule, and perceptual-loss super-resolution,
plus the three-head comparison runner.

Every run is fully determined by its config and seed: all sampling flows
through derived splitmix streams and the metrics log is reproducible
byte-for-byte through `metrics.export_csv`.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import (
    ImageBatch,
    SynthSpec,
    channel_stats,
    downsample,
    load_cifar10,
    make_probe,
    synth_dataset,
    write_ppm,
)
from .heads import ChannelStats, HeadKind, OutputHead, make_head, saturation_fraction
from .layers import (
    INFER,
    TRAIN,
    Adam,
    LayerSpec,
    Sequential,
    build_network,
    save_checkpoint,
)
from .losses import (
    DEFAULT_GP_WEIGHT,
    PerceptualLossNet,
    critic_loss,
    generator_loss,
    perceptual_loss,
    wasserstein_estimate,
)
from .metrics import export_csv, export_histogram_csv, export_image_grid, histogram
from .rng import SplitMix64, derive_seed
from .tensor import Tape, Tensor

GAN_COLUMNS = (
    "iteration",
    "critic_total",
    "critic_real",
    "critic_fake",
    "penalty",
    "wasserstein",
    "generator_loss",
    "critic_iters",
    "out_mean_r",
    "out_mean_g",
    "out_mean_b",
    "out_std_r",
    "out_std_g",
    "out_std_b",
    "saturation",
    "hist_id",
)

SR_COLUMNS = (
    "iteration",
    "perceptual_loss",
    "out_mean_r",
    "out_mean_g",
    "out_mean_b",
    "out_std_r",
    "out_std_g",
    "out_std_b",
    "saturation",
    "hist_id",
)


class TrainingDiverged(RuntimeError):
    """Raised on the first non-finite loss, carrying the diagnostic record."""

    def __init__(self, iteration: int, detail: dict):
        super().__init__(f"non-finite loss at iteration {iteration}: {detail}")
        self.iteration = iteration
        self.detail = detail


@dataclass(frozen=True)
class TrainSchedule:
    """Critic/generator iteration regime: a heavy warm-up, a steady ratio,
    and a one-time critic recalibration burst."""

    n_critic_default: int = 5
    warmup_gen_iters: int = 25
    warmup_n_critic: int = 50
    recalibration_gen_iter: int = 500
    recalibration_n_critic: int = 50

    def __post_init__(self):
        for name in (
            "n_critic_default",
            "warmup_gen_iters",
            "warmup_n_critic",
            "recalibration_gen_iter",
            "recalibration_n_critic",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def critic_iters_for(schedule: TrainSchedule, gen_iter: int) -> int:
    """Critic updates to run before generator iteration `gen_iter`."""
    if gen_iter < 0:
        raise ValueError("gen_iter must be >= 0")
    if gen_iter < schedule.warmup_gen_iters:
        return schedule.warmup_n_critic
    if gen_iter == schedule.recalibration_gen_iter:
        return schedule.recalibration_n_critic
    return schedule.n_critic_default


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


def default_gan_dataset() -> dict:
    """The default synthetic color-moment task for the head comparison."""
    return {
        "kind": "synth",
        "mean": [-0.15, 0.05, 0.25],
        "std": [0.30, 0.25, 0.20],
        "structure": "two-tone-blobs",
        "seed": None,  # derived from the run seed
    }


@dataclass(frozen=True)
class GanConfig:
    z_dim: int = 64
    image_size: int = 16
    batch_size: int = 64
    total_gen_iters: int = 150
    head: str = "bn-tanh"
    gp_weight: float = DEFAULT_GP_WEIGHT
    adam: AdamConfig = AdamConfig()
    schedule: TrainSchedule = TrainSchedule()
    seed: int = 0
    dataset: dict = field(default_factory=default_gan_dataset)
    dataset_size: int = 256
    gen_channels: tuple[int, int, int] = (24, 16, 32)
    critic_channels: tuple[int, int] = (12, 24)
    snapshot_every: int = 0  # 0 disables histogram/grid snapshots

    def __post_init__(self):
        if self.z_dim < 1:
            raise ValueError("z_dim must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (BN needs batch statistics)")
        if self.image_size % 4:
            raise ValueError("image_size must be divisible by 4")
        HeadKind.parse(self.head)


def default_sr_dataset() -> dict:
    return {
        "kind": "synth",
        "mean": [-0.15, 0.05, 0.25],
        "std": [0.30, 0.25, 0.20],
        "structure": "two-tone-blobs",
        "seed": None,
    }


@dataclass(frozen=True)
class SrConfig:
    image_size_high: int = 32
    factor: int = 4
    batch_size: int = 16
    total_iters: int = 200
    head: str = "bn-tanh"
    adam: AdamConfig = AdamConfig(lr=1e-3, beta2=0.999)
    seed: int = 0
    dataset: dict = field(default_factory=default_sr_dataset)
    dataset_size: int = 128
    gen_channels: tuple[int, int] = (32, 16)
    loss_net_widths: tuple[int, int, int] = (8, 16, 16)
    loss_weights: tuple[float, float, float] = (0.1, 0.8, 0.1)
    loss_net_seed: int | None = None
    snapshot_every: int = 0
    probe_every: int = 50

    def __post_init__(self):
        if self.image_size_high % self.factor:
            raise ValueError("high resolution must be a multiple of the factor")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        HeadKind.parse(self.head)


def _to_jsonable(value):
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    return value


def config_to_dict(cfg) -> dict:
    return _to_jsonable(asdict(cfg))


def _build_config(cls, data: dict, overrides: dict):
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    kwargs = {}
    for f_ in cls.__dataclass_fields__.values():
        if f_.name not in merged:
            continue
        value = merged[f_.name]
        if f_.name == "adam" and isinstance(value, dict):
            value = AdamConfig(**value)
        elif f_.name == "schedule" and isinstance(value, dict):
            value = TrainSchedule(**value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[f_.name] = value
    unknown = set(merged) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    return cls(**kwargs)


def gan_config_from_dict(data: dict, **overrides) -> GanConfig:
    return _build_config(GanConfig, data, overrides)


def sr_config_from_dict(data: dict, **overrides) -> SrConfig:
    return _build_config(SrConfig, data, overrides)


# --- metrics log ----------------------------------------------------------------

class MetricsLog:
    """Fixed-column per-iteration records plus histogram snapshots."""

    def __init__(self, columns: tuple[str, ...]):
        self.columns = tuple(columns)
        self.rows: list[tuple[float, ...]] = []
        self.histograms: dict[int, "Histogram"] = {}
        self.meta: dict = {}

    def append(self, record: dict) -> None:
        if set(record) != set(self.columns):
            missing = set(self.columns) - set(record)
            extra = set(record) - set(self.columns)
            raise ValueError(f"bad record: missing {missing or '{}'}, extra {extra or '{}'}")
        if self.rows and record["iteration"] <= self.rows[-1][0]:
            raise ValueError("iteration indices must be strictly increasing")
        self.rows.append(tuple(float(record[c]) for c in self.columns))

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([row[idx] for row in self.rows])

    def __len__(self) -> int:
        return len(self.rows)


# --- datasets -------------------------------------------------------------------

def resolve_dataset(source: dict, n: int, h: int, w: int, run_seed: int) -> ImageBatch:
    """Materialize the configured dataset: synthetic spec or CIFAR files."""
    kind = source.get("kind", "synth")
    if kind == "synth":
        seed = source.get("seed")
        if seed is None:
            seed = derive_seed(run_seed, "dataset")
        spec = SynthSpec(
            mean=tuple(source["mean"]),
            std=tuple(source["std"]),
            structure=source.get("structure", "two-tone-blobs"),
            seed=seed,
        )
        return synth_dataset(spec, n, h, w)
    if kind == "cifar":
        batch = load_cifar10(source["path"], source.get("class_filter"))
        if batch.values.shape[2] != h:
            raise ValueError(f"CIFAR images are 32x32; config expects {h}x{w}")
        return batch
    raise ValueError(f"unknown dataset kind {kind!r}")


# --- networks --------------------------------------------------------------------

class Generator:
    """Body network producing 3-channel pre-activations, plus an output head."""

    def __init__(self, body: Sequential, head: OutputHead):
        self.body = body
        self.head = head

    def forward_parts(self, x: Tensor, mode: str = TRAIN) -> tuple[Tensor, Tensor]:
        self.body.set_mode(mode)
        pre_act = self.body.forward(x)
        return self.head.forward_parts(pre_act, mode)

    def forward(self, x: Tensor, mode: str = TRAIN) -> Tensor:
        return self.forward_parts(x, mode)[0]

    def params(self):
        return self.body.params() + [(f"head.{n}", p) for n, p in self.head.params()]


def build_gan_generator(cfg: GanConfig, stats: ChannelStats) -> Generator:
    c0, c1, c2 = cfg.gen_channels
    s0 = cfg.image_size // 4
    # the 5x5 pre-activation conv keeps the final-layer fan-in large, so with
    # 0.02-std weights the raw pre-activations start wide and off-center per
    # channel, the regime where the choice of output head actually matters
    specs = [
        LayerSpec("dense", in_dim=cfg.z_dim, out_dim=c0 * s0 * s0),
        LayerSpec("reshape", sample_shape=(c0, s0, s0)),
        LayerSpec("conv-transpose", in_dim=c0, out_dim=c1, kernel=4, stride=2, pad=1),
        LayerSpec("bn", out_dim=c1),
        LayerSpec("activation", activation="relu"),
        LayerSpec("conv-transpose", in_dim=c1, out_dim=c2, kernel=4, stride=2, pad=1),
        LayerSpec("bn", out_dim=c2),
        LayerSpec("activation", activation="relu"),
        LayerSpec("conv", in_dim=c2, out_dim=3, kernel=5, stride=1, pad=2),
    ]
    body = build_network(specs, derive_seed(cfg.seed, "generator"))
    kind = HeadKind.parse(cfg.head)
    head = make_head(kind, 3, stats if kind is HeadKind.BN_CLIP else None)
    return Generator(body, head)


def build_critic(cfg: GanConfig) -> Sequential:
    d0, d1 = cfg.critic_channels
    s_out = cfg.image_size // 4
    specs = [
        LayerSpec("conv", in_dim=3, out_dim=d0, kernel=4, stride=2, pad=1),
        LayerSpec("layer-norm", out_dim=d0),
        LayerSpec("activation", activation="leaky-relu"),
        LayerSpec("conv", in_dim=d0, out_dim=d1, kernel=4, stride=2, pad=1),
        LayerSpec("layer-norm", out_dim=d1),
        LayerSpec("activation", activation="leaky-relu"),
        LayerSpec("flatten"),
        LayerSpec("dense", in_dim=d1 * s_out * s_out, out_dim=1),
    ]
    return build_network(specs, derive_seed(cfg.seed, "critic"))


def build_sr_generator(cfg: SrConfig, stats: ChannelStats) -> Generator:
    c0, c1 = cfg.gen_channels
    specs = [
        LayerSpec("conv-transpose", in_dim=3, out_dim=c0, kernel=4, stride=2, pad=1),
        LayerSpec("bn", out_dim=c0),
        LayerSpec("activation", activation="relu"),
        LayerSpec("conv-transpose", in_dim=c0, out_dim=c1, kernel=4, stride=2, pad=1),
        LayerSpec("bn", out_dim=c1),
        LayerSpec("activation", activation="relu"),
        LayerSpec("conv", in_dim=c1, out_dim=3, kernel=3, stride=1, pad=1),
    ]
    body = build_network(specs, derive_seed(cfg.seed, "generator"))
    kind = HeadKind.parse(cfg.head)
    head = make_head(kind, 3, stats if kind is HeadKind.BN_CLIP else None)
    return Generator(body, head)


def sample_generator(gen: Generator, inputs, mode: str = TRAIN) -> ImageBatch:
    """Full forward pass; the head keeps the output inside [-1, 1]."""
    x = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs))
    out = gen.forward(x, mode)
    return ImageBatch(out.data.copy(), tag="generated")


# --- shared helpers ------------------------------------------------------------------

def _check_finite(value: float, iteration: int, detail: dict) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(iteration, detail)


def _channel_moments(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return values.mean(axis=(0, 2, 3)), values.std(axis=(0, 2, 3))


def _snapshot(log, out_vals, iteration, out_dir, every) -> int:
    if not every or iteration % every:
        return -1
    hist = histogram(ImageBatch(out_vals, tag="generated"))
    log.histograms[iteration] = hist
    if out_dir is not None:
        export_histogram_csv(hist, Path(out_dir) / f"hist_{iteration:06d}.csv")
        export_image_grid(
            ImageBatch(out_vals[:16], tag="generated"),
            cols=4,
            path=Path(out_dir) / f"samples_{iteration:06d}.ppm",
        )
    return iteration


def _finish(log, out_dir, params, csv_name="metrics.csv"):
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        export_csv(log, out / csv_name)
        save_checkpoint(params, out / "checkpoint.bin")
    return log


# --- GAN training ---------------------------------------------------------------------

def train_gan(cfg: GanConfig, out_dir=None) -> MetricsLog:
    """Run the critic/generator schedule and return the per-iteration log.

    Each generator iteration runs `critic_iters_for` critic updates (fresh
    real batch and fresh latents each) followed by one generator update; the
    critic columns of the log hold the last critic update of that iteration.
    """
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    dataset = resolve_dataset(
        cfg.dataset, cfg.dataset_size, cfg.image_size, cfg.image_size, cfg.seed
    )
    stats = channel_stats(dataset)
    gen = build_gan_generator(cfg, stats)
    critic_net = build_critic(cfg)

    def critic_fn(x: Tensor) -> Tensor:
        return critic_net.forward(x)

    a = cfg.adam
    g_opt = Adam([p for _, p in gen.params()], a.lr, a.beta1, a.beta2, a.eps)
    c_opt = Adam([p for _, p in critic_net.params()], a.lr, a.beta1, a.beta2, a.eps)

    data_rng = SplitMix64(derive_seed(cfg.seed, "batches"))
    z_rng = SplitMix64(derive_seed(cfg.seed, "latents"))
    gp_rng = SplitMix64(derive_seed(cfg.seed, "interpolates"))

    log = MetricsLog(GAN_COLUMNS)
    log.meta.update(
        target_mean=stats.mean.tolist(),
        target_std=stats.std.tolist(),
        total_gen_iters=cfg.total_gen_iters,
        critic_updates=0,
        gen_updates=0,
    )

    def real_batch() -> np.ndarray:
        idx = data_rng.integers(len(dataset), (cfg.batch_size,))
        return dataset.values[idx]

    def fake_batch() -> np.ndarray:
        # constants for the critic step: forward outside any tape
        z = Tensor(z_rng.normal((cfg.batch_size, cfg.z_dim)))
        return gen.forward(z, TRAIN).data

    for it in range(cfg.total_gen_iters):
        k = critic_iters_for(cfg.schedule, it)
        parts = None
        for _ in range(k):
            real = real_batch()
            fake = fake_batch()
            with Tape() as tape:
                parts = critic_loss(critic_fn, real, fake, cfg.gp_weight, gp_rng)
                _check_finite(
                    parts.total,
                    it,
                    {"critic_total": parts.total, "penalty": parts.penalty},
                )
                tape.backward(parts.tensor)
            c_opt.step()
            c_opt.zero_grad()
            log.meta["critic_updates"] += 1

        z = Tensor(z_rng.normal((cfg.batch_size, cfg.z_dim)))
        with Tape() as tape:
            out, pre = gen.forward_parts(z, TRAIN)
            g_loss = generator_loss(critic_fn, out)
            _check_finite(g_loss.item(), it, {"generator_loss": g_loss.item()})
            tape.backward(g_loss)
        g_opt.step()
        g_opt.zero_grad()
        log.meta["gen_updates"] += 1

        out_vals = out.data
        mean, std = _channel_moments(out_vals)
        hist_id = _snapshot(log, out_vals, it, out_dir, cfg.snapshot_every)
        log.append(
            {
                "iteration": it,
                "critic_total": parts.total,
                "critic_real": parts.mean_real,
                "critic_fake": parts.mean_fake,
                "penalty": parts.penalty,
                "wasserstein": wasserstein_estimate(parts),
                "generator_loss": g_loss.item(),
                "critic_iters": k,
                "out_mean_r": mean[0],
                "out_mean_g": mean[1],
                "out_mean_b": mean[2],
                "out_std_r": std[0],
                "out_std_g": std[1],
                "out_std_b": std[2],
                "saturation": saturation_fraction(pre, gen.head.saturation_threshold),
                "hist_id": hist_id,
            }
        )

    return _finish(log, out_dir, gen.params() + critic_net.params())


# --- super-resolution training -----------------------------------------------------------

def train_sr(cfg: SrConfig, out_dir=None) -> MetricsLog:
    """Train the upsampling generator against the perceptual loss."""
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    size = cfg.image_size_high
    high = resolve_dataset(cfg.dataset, cfg.dataset_size, size, size, cfg.seed)
    low = downsample(high, cfg.factor)
    stats = channel_stats(high)
    gen = build_sr_generator(cfg, stats)
    loss_seed = (
        cfg.loss_net_seed
        if cfg.loss_net_seed is not None
        else derive_seed(cfg.seed, "loss-net")
    )
    net = PerceptualLossNet.seeded(
        loss_seed, in_channels=3, widths=cfg.loss_net_widths, weights=cfg.loss_weights
    )
    a = cfg.adam
    opt = Adam([p for _, p in gen.params()], a.lr, a.beta1, a.beta2, a.eps)
    data_rng = SplitMix64(derive_seed(cfg.seed, "batches"))

    probe_low = None
    if out_dir is not None and cfg.probe_every:
        spec = SynthSpec(
            mean=tuple(cfg.dataset["mean"]),
            std=tuple(cfg.dataset["std"]),
            structure=cfg.dataset.get("structure", "two-tone-blobs"),
            seed=derive_seed(cfg.seed, "probe"),
        )
        probe = make_probe(spec, size, size)
        write_ppm(probe, 0, Path(out_dir) / "probe_target.ppm")
        probe_low = downsample(probe, cfg.factor)

    log = MetricsLog(SR_COLUMNS)
    log.meta.update(
        target_mean=stats.mean.tolist(),
        target_std=stats.std.tolist(),
        total_iters=cfg.total_iters,
        updates=0,
    )

    for it in range(cfg.total_iters):
        idx = data_rng.integers(len(high), (cfg.batch_size,))
        low_batch = Tensor(low.values[idx])
        high_batch = high.values[idx]
        with Tape() as tape:
            out, pre = gen.forward_parts(low_batch, TRAIN)
            loss = perceptual_loss(net, out, high_batch)
            _check_finite(loss.item(), it, {"perceptual_loss": loss.item()})
            tape.backward(loss)
        opt.step()
        opt.zero_grad()
        log.meta["updates"] += 1

        out_vals = out.data
        mean, std = _channel_moments(out_vals)
        hist_id = _snapshot(log, out_vals, it, out_dir, cfg.snapshot_every)
        log.append(
            {
                "iteration": it,
                "perceptual_loss": loss.item(),
                "out_mean_r": mean[0],
                "out_mean_g": mean[1],
                "out_mean_b": mean[2],
                "out_std_r": std[0],
                "out_std_g": std[1],
                "out_std_b": std[2],
                "saturation": saturation_fraction(pre, gen.head.saturation_threshold),
                "hist_id": hist_id,
            }
        )

        if probe_low is not None and (it % cfg.probe_every == 0 or it == cfg.total_iters - 1):
            rendered = sample_generator(gen, probe_low.values, TRAIN)
            write_ppm(rendered, 0, Path(out_dir) / f"probe_{it:06d}.ppm")

    return _finish(log, out_dir, gen.params())


# --- head comparison -----------------------------------------------------------------------

@dataclass
class ComparisonRun:
    head: str
    seed: int
    event_iteration: int
    converged: bool


@dataclass
class ComparisonReport:
    """Per-head channel-mean-convergence events and their medians."""

    delta: float
    total_gen_iters: int
    runs: list[ComparisonRun]
    medians: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "total_gen_iters": self.total_gen_iters,
            "runs": [asdict(r) for r in self.runs],
            "medians": self.medians,
        }


def convergence_iteration(log: MetricsLog, delta: float) -> tuple[int, bool]:
    """First generator iteration whose generated-batch channel means all sit
    within `delta` of the target means; (total, False) when never reached."""
    target = np.asarray(log.meta["target_mean"])
    means = np.stack(
        [log.column("out_mean_r"), log.column("out_mean_g"), log.column("out_mean_b")],
        axis=1,
    )
    hits = np.all(np.abs(means - target[None, :]) <= delta, axis=1)
    idx = np.nonzero(hits)[0]
    if idx.size == 0:
        return int(log.meta["total_gen_iters"]), False
    return int(log.column("iteration")[idx[0]]), True


def run_comparison(
    base_cfg: GanConfig,
    heads: list[str],
    seeds: list[int],
    delta: float = 0.05,
    out_dir=None,
) -> ComparisonReport:
    """Train every (head, seed) pair under otherwise identical configs and
    report each run's channel-mean-convergence iteration plus per-head medians."""
    if not heads or not seeds:
        raise ValueError("need at least one head and one seed")
    runs = []
    for head in heads:
        HeadKind.parse(head)
        for seed in seeds:
            cfg = replace(base_cfg, head=head, seed=seed)
            run_dir = None
            if out_dir is not None:
                run_dir = Path(out_dir) / "runs" / f"{head}-seed{seed}"
            log = train_gan(cfg, run_dir)
            event, converged = convergence_iteration(log, delta)
            runs.append(ComparisonRun(head, seed, event, converged))
    medians = {
        head: float(statistics.median([r.event_iteration for r in runs if r.head == head]))
        for head in heads
    }
    return ComparisonReport(
        delta=delta,
        total_gen_iters=base_cfg.total_gen_iters,
        runs=runs,
        medians=medians,
    )

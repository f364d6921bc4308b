"""End-to-end experiment drivers.

Training runs that write thinned posterior checkpoints and a progress log,
bottom-half reconstruction by posterior averaging of missing-pixel
conditional means, fantasy generation by ancestral sampling, and feature-map
export: bottom-layer weight images with absent edges rendered black, and
deep-unit activation maps propagated down through the sigmoid.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cibpnet.checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from cibpnet.data_io import (
    Dataset,
    load_csv,
    load_idx,
    load_pgm,
    to_pixel_space,
    write_pgm,
)
from cibpnet.mcmc import SweepConfig, hidden_pass, progress_line, sweep
from cibpnet.nlgbn import (
    ModelState,
    UnitStates,
    ancestral_sample,
    init_from_prior,
    layer_activations,
    sample_states_from_prior,
    sigmoid,
    unit_conditional_mean,
)


@dataclass
class RunConfig:
    """Training-run settings: schedule, sampler config, and output location."""

    out_dir: str | Path
    sweeps: int = 1000
    burn_in: int = 500
    thin: int = 10
    checkpoint_every: int = 100
    sweep: SweepConfig = field(default_factory=SweepConfig)
    data_path: str | Path | None = None
    alpha0: float = 1.0
    beta0: float = 1.0
    init_depth_cap: int = 1000

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.sweeps > 0:
            if not (0 <= self.burn_in < self.sweeps):
                raise ValueError("burn_in must satisfy 0 <= burn_in < sweeps")
        elif self.burn_in != 0:
            raise ValueError("a zero-sweep run takes burn_in 0")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be nonnegative")


@dataclass
class ReconstructionReport:
    """Per-image squared errors on missing pixels, in original pixel units."""

    model_mse: np.ndarray
    baseline_mse: np.ndarray
    n_posterior_samples: int

    def __post_init__(self):
        if np.any(self.model_mse < 0) or np.any(self.baseline_mse < 0):
            raise ValueError("mean squared errors cannot be negative")

    def write_csv(self, path: str | Path) -> None:
        lines = ["image_index,model_mse,baseline_mse"]
        for i, (a, b) in enumerate(zip(self.model_mse, self.baseline_mse)):
            lines.append(f"{i},{format(a, '.17g')},{format(b, '.17g')}")
        Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    """Dispatch a data file to the matching reader by suffix, else by magic."""
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".csv":
        return load_csv(p)
    if suffix == ".pgm":
        return load_pgm(p)
    if suffix == ".idx" or p.name.endswith("-ubyte"):
        return load_idx(p)
    with open(p, "rb") as f:
        head = f.read(4)
    if head[:2] in (b"P2", b"P5"):
        return load_pgm(p)
    if head == b"\x00\x00\x08\x03":
        return load_idx(p)
    return load_csv(p)


def make_bars_dataset(
    n: int,
    rng: np.random.Generator,
    size: int = 8,
    bar_prob: float = 0.2,
    level: float = 0.8,
    jitter: float = 0.05,
) -> Dataset:
    """Synthetic bars images: random horizontal and vertical stripes.

    Every row and column is switched on independently; pixels on a bar sit
    near +level, the background near -level, with uniform jitter.
    """
    rows_on = rng.random((n, size)) < bar_prob
    cols_on = rng.random((n, size)) < bar_prob
    lit = rows_on[:, :, None] | cols_on[:, None, :]
    img = np.where(lit, level, -level) + jitter * rng.uniform(-1, 1, lit.shape)
    return Dataset(img.reshape(n, size * size), image_shape=(size, size))


def train(
    config: RunConfig, rng: np.random.Generator, dataset: Dataset | None = None
) -> list[Path]:
    """Run MCMC from a full prior draw, writing checkpoints and a progress log.

    Posterior checkpoints are the thinned post-burn-in states; ``latest.txt``
    is refreshed every ``checkpoint_every`` sweeps with unit states included,
    for crash recovery.  A status file flags completion; any failure leaves
    it marked failed with partial outputs on disk.
    """
    if dataset is None:
        if config.data_path is None:
            raise ValueError("train needs a dataset or a data_path")
        dataset = load_dataset(config.data_path)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    status = out / "run_status.txt"
    status.write_text("running\n")
    paths: list[Path] = []
    try:
        state = init_from_prior(
            dataset, config.alpha0, config.beta0, rng, depth_cap=config.init_depth_cap
        )
        mean = dataset.observations.mean(axis=0) if dataset.n else np.zeros(dataset.width)
        (out / "train_pixel_mean.txt").write_text(
            " ".join(format(v, ".17g") for v in mean) + "\n"
        )
        if config.sweeps == 0:
            p = out / "checkpoint_000000.txt"
            write_checkpoint(p, state, include_states=False)
            paths.append(p)
            status.write_text("complete\n")
            return paths
        with open(out / "progress.log", "w") as log:
            for s in range(1, config.sweeps + 1):
                _, stats = sweep(state, config.sweep, rng)
                log.write(progress_line(s, state, stats) + "\n")
                if s > config.burn_in and (s - config.burn_in) % config.thin == 0:
                    p = out / f"checkpoint_{s:06d}.txt"
                    write_checkpoint(p, state, include_states=False)
                    paths.append(p)
                if config.checkpoint_every and s % config.checkpoint_every == 0:
                    write_checkpoint(out / "latest.txt", state, include_states=True)
        status.write_text("complete\n")
        return paths
    except BaseException as e:
        try:
            status.write_text(f"failed: {e}\n")
        except OSError:
            pass
        raise


def _fresh_states(ck: Checkpoint, dataset: Dataset, rng: np.random.Generator) -> ModelState:
    values = [
        np.zeros((dataset.n, ck.structure.width(m)))
        for m in range(ck.structure.depth + 1)
    ]
    state = ck.to_state(dataset, states=UnitStates(values))
    sample_states_from_prior(state, rng)
    return state


def _reconstruct_block(
    checkpoints: list[Checkpoint],
    dataset: Dataset,
    rng: np.random.Generator,
    burn: int,
    samples: int,
    spacing: int,
    config: SweepConfig,
) -> np.ndarray:
    """Accumulated conditional-mean predictions for one block of images."""
    acc = np.zeros_like(dataset.observations)
    for ck in checkpoints:
        state = _fresh_states(ck, dataset, rng)
        for _ in range(burn):
            hidden_pass(state, config, rng)
        nu0 = state.layers[0].precisions
        for _ in range(samples):
            for _ in range(spacing):
                hidden_pass(state, config, rng)
            y0 = layer_activations(state, 0)
            acc += unit_conditional_mean(y0, nu0)
    return acc / (len(checkpoints) * samples)


def reconstruct(
    checkpoint_paths: list[str | Path],
    dataset: Dataset,
    rng: np.random.Generator,
    train_pixel_mean: np.ndarray,
    burn: int = 50,
    samples: int = 50,
    spacing: int = 2,
    mtm_candidates: int = 5,
    threads: int = 1,
) -> tuple[ReconstructionReport, np.ndarray]:
    """Fill in masked-off pixels by posterior averaging across checkpoints.

    Missing pixels are treated as latent units: per checkpoint, hidden states
    and missing pixels are resampled conditioned on the observed pixels, and
    the missing-pixel conditional means given the sampled activations are
    averaged across within-checkpoint samples and checkpoints.  Reports
    per-image mean squared error against the held-out truth alongside the
    per-pixel training-mean baseline, both in original pixel units when the
    data came from integer pixels.
    """
    if dataset.masks is None:
        raise ValueError("reconstruction requires a dataset with masks")
    if not checkpoint_paths:
        raise ValueError("no checkpoints given")
    train_pixel_mean = np.asarray(train_pixel_mean, dtype=np.float64)
    if train_pixel_mean.shape != (dataset.width,):
        raise ValueError("train_pixel_mean width does not match the data")
    checkpoints = [read_checkpoint(p) for p in checkpoint_paths]
    for ck in checkpoints:
        if ck.structure.visible_width != dataset.width:
            raise ValueError(
                f"checkpoint visible width {ck.structure.visible_width} "
                f"does not match data width {dataset.width}"
            )
    config = SweepConfig(mtm_candidates=mtm_candidates)
    threads = max(1, min(threads, dataset.n)) if dataset.n else 1
    if threads == 1 or dataset.n == 0:
        pred = _reconstruct_block(
            checkpoints, dataset, rng, burn, samples, spacing, config
        )
    else:
        bounds = np.linspace(0, dataset.n, threads + 1).astype(int)
        blocks = [
            Dataset(
                dataset.observations[a:b].copy(),
                dataset.masks[a:b].copy(),
                dataset.image_shape,
                dataset.pixel_maxval,
            )
            for a, b in zip(bounds, bounds[1:])
        ]
        rngs = rng.spawn(threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(
                pool.map(
                    lambda args: _reconstruct_block(
                        checkpoints, args[0], args[1], burn, samples, spacing, config
                    ),
                    zip(blocks, rngs),
                )
            )
        pred = np.vstack(parts)
    filled = np.where(dataset.masks, dataset.observations, pred)
    maxval = dataset.pixel_maxval
    if maxval is not None:
        err_model = to_pixel_space(pred, maxval) - to_pixel_space(
            dataset.observations, maxval
        )
        err_base = to_pixel_space(np.broadcast_to(train_pixel_mean, pred.shape), maxval) - to_pixel_space(
            dataset.observations, maxval
        )
    else:
        err_model = pred - dataset.observations
        err_base = np.broadcast_to(train_pixel_mean, pred.shape) - dataset.observations
    missing = ~dataset.masks
    n_missing = np.maximum(missing.sum(axis=1), 1)
    model_mse = np.where(
        missing.any(axis=1), np.sum(err_model**2 * missing, axis=1) / n_missing, 0.0
    )
    base_mse = np.where(
        missing.any(axis=1), np.sum(err_base**2 * missing, axis=1) / n_missing, 0.0
    )
    report = ReconstructionReport(model_mse, base_mse, len(checkpoints) * samples)
    return report, filled


def fantasize(
    checkpoint_paths: list[str | Path], count: int, rng: np.random.Generator
) -> np.ndarray:
    """Ancestral visible-layer draws, cycling through the checkpoints."""
    if count == 0:
        width = 0
        if checkpoint_paths:
            width = read_checkpoint(checkpoint_paths[0]).structure.visible_width
        return np.zeros((0, width))
    if not checkpoint_paths:
        raise ValueError("no checkpoints given")
    checkpoints = [read_checkpoint(p) for p in checkpoint_paths]
    out = np.empty((count, checkpoints[0].structure.visible_width))
    for i in range(count):
        ck = checkpoints[i % len(checkpoints)]
        out[i] = ancestral_sample(ck.structure, ck.layers, rng)
    return out


def bottom_feature_image(ck: Checkpoint, unit: int) -> np.ndarray:
    """Byte image of one layer-1 unit's weights; absent edges are black.

    Present weights map symmetrically around mid-gray by the unit's largest
    magnitude, into 1..255 so the sentinel 0 is unambiguous.
    """
    z = ck.structure.matrices[0].z[:, unit]
    w = ck.layers[1].weights[:, unit]
    img = np.zeros(z.shape[0], dtype=np.int64)
    on = z == 1
    if on.any():
        scale = np.max(np.abs(w[on]))
        scaled = np.zeros_like(w) if scale == 0 else w / scale
        img[on] = np.clip(128 + np.rint(127 * scaled[on]), 1, 255).astype(np.int64)
    return img


def deep_unit_activation_image(ck: Checkpoint, layer: int, unit: int) -> np.ndarray:
    """Visible response to switching one deep unit on, all others off.

    The unit's value is set to one, every other unit in its layer to zero,
    and pre-sigmoid means are propagated down through the sigmoid at each
    layer.  Returns visible-layer values in (-1, 1).
    """
    if not (1 <= layer <= ck.structure.depth):
        raise ValueError(f"layer {layer} outside 1..{ck.structure.depth}")
    u = np.zeros(ck.structure.width(layer))
    u[unit] = 1.0
    for m in range(layer - 1, -1, -1):
        wz = ck.layers[m + 1].weights * ck.structure.matrices[m].z
        u = sigmoid(ck.layers[m].biases + wz @ u)
    return u


def export_feature_maps(
    checkpoint_path: str | Path,
    image_shape: tuple[int, int],
    out_dir: str | Path,
) -> list[Path]:
    """Write bottom-layer weight images and deep-unit activation maps as PGM."""
    ck = read_checkpoint(checkpoint_path)
    h, w = image_shape
    if h * w != ck.structure.visible_width:
        raise ValueError(
            f"image shape {image_shape} does not cover {ck.structure.visible_width} pixels"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if ck.structure.depth >= 1:
        for unit in range(ck.structure.width(1)):
            img = bottom_feature_image(ck, unit).reshape(h, w)
            p = out / f"feature_layer1_unit{unit:03d}.pgm"
            header = f"P5\n{w} {h}\n255\n".encode()
            p.write_bytes(header + img.astype(np.uint8).tobytes())
            paths.append(p)
    for layer in range(2, ck.structure.depth + 1):
        for unit in range(ck.structure.width(layer)):
            vis = deep_unit_activation_image(ck, layer, unit).reshape(h, w)
            p = out / f"activation_layer{layer}_unit{unit:03d}.pgm"
            write_pgm(p, vis)
            paths.append(p)
    return paths

"""Continual-learning orchestrator: replay-interleaved training with
consistency distillation, the similarity-based iteration speedup, selective
generator training, and the SF / Individual baselines.

The stage loop is strictly sequential; every random draw derives from the run
seed plus a purpose tag, so disabling a feature never perturbs the random
streams of the features that remain (this is what makes the SF-equivalence
oracle bit-exact).
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import imaging, memgen, restorer
from .imaging import HogConfig, hog, kl_divergence, psnr, ssim
from .synthdata import DatasetStream, RainDataset, make_dataset, make_holdout

TEST_FRACTION = 0.2

# Per-pixel FLOPs estimate for one forward pass of the restorer (2 FLOPs per
# multiply-accumulate, summed over the three conv layers); backward costs
# roughly twice the forward.
_MACS_PER_PIXEL = 9 * (3 * 8 + 8 * 8 + 8 * 3)
FLOPS_PER_PIXEL_FWD = 2 * _MACS_PER_PIXEL
FLOPS_PER_PIXEL_STEP = 3 * FLOPS_PER_PIXEL_FWD


def derive_seed(seed: int, tag: str, n: int = 0) -> int:
    digest = hashlib.blake2b(f"{seed}:{tag}:{n}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class StageConfig:
    iterations: int = 2000
    batch_size: int = 4
    lam: float = 1.0  # interleave-vs-consistency balance
    threshold: float = 0.4  # selective generator-training cutoff
    floor: float = 0.05  # minimum fraction of iterations under speedup
    speedup: bool = False
    selective: bool = False
    reuse: bool = False
    replay: bool = True
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0
    holdout_pairs: int = 8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not 0.0 <= self.floor <= 1.0:
            raise ValueError("floor must be in [0, 1]")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")


@dataclass(frozen=True)
class SimilarityReport:
    per_generator: tuple  # s_i per prior-dataset slot (None for empty slots)
    s_min: float | None  # min over populated slots; None at bootstrap
    s_hat: float  # 1 - exp(-s_min), or 1.0 at bootstrap

    @classmethod
    def bootstrap(cls):
        return cls(per_generator=(), s_min=None, s_hat=1.0)


@dataclass
class StreamReport:
    method: str
    dataset_ids: list
    memory: dict = field(default_factory=dict)  # (stage, dataset) -> (psnr, ssim)
    generalization: list = field(default_factory=list)  # per stage (psnr, ssim)
    iterations: list = field(default_factory=list)
    sampler_calls: list = field(default_factory=list)
    similarity: list = field(default_factory=list)  # per stage SimilarityReport
    deltas: list = field(default_factory=list)  # per stage generator-training flag
    replay_active: list = field(default_factory=list)  # per stage bool
    loss_logs: list = field(default_factory=list)  # per stage list of step dicts

    @property
    def n_stages(self):
        return len(self.iterations)

    def avg_memory_psnr(self, stage=None):
        stage = stage if stage is not None else self.n_stages
        vals = [self.memory[(stage, d)][0] for d in range(1, stage + 1)
                if (stage, d) in self.memory]
        return float(np.mean(vals))


def aggregate_hog(images, cfg: HogConfig = HogConfig()):
    """Dataset-level descriptor: mean of per-image HOGs, renormalized."""
    vals = np.mean([hog(img, cfg).values for img in images], axis=0)
    return imaging.HogDescriptor(bins=cfg.bins, values=vals / vals.sum())


def similarity(current_rainy, replay: memgen.ReplayDataset | None,
               n_priors: int, cfg: HogConfig = HogConfig()) -> SimilarityReport:
    """Rain-pattern similarity between the incoming dataset and each prior
    slot's replayed subset; smaller KL means more similar."""
    if replay is None or n_priors == 0:
        return SimilarityReport.bootstrap()
    h_n = aggregate_hog(current_rainy, cfg)
    scores = []
    for slot in range(n_priors):
        subset = replay.subset(slot)
        if not subset:
            scores.append(None)
            continue
        h_i = aggregate_hog([r for r, _ in subset], cfg)
        scores.append(kl_divergence(h_i, h_n))
    populated = [s for s in scores if s is not None]
    if not populated:
        return SimilarityReport.bootstrap()
    s_min = min(populated)
    return SimilarityReport(per_generator=tuple(scores), s_min=s_min,
                            s_hat=1.0 - math.exp(-s_min))


def scaled_iterations(s_hat: float, iterations: int, floor: float) -> int:
    """Similarity-scaled iteration budget: round(s_hat * I), floored."""
    if not 0.0 <= s_hat <= 1.0:
        raise ValueError(f"normalized similarity must be in [0, 1], got {s_hat}")
    scaled = int(math.floor(s_hat * iterations + 0.5))
    floor_iters = int(math.floor(floor * iterations + 0.5))
    return min(iterations, max(scaled, floor_iters))


class _BatchSampler:
    """Cyclic shuffled-epoch batch drawing over a fixed pair list."""

    def __init__(self, pairs, batch_size, rng):
        self.pairs = pairs
        self.batch_size = batch_size
        self.rng = rng
        self.order = []

    def next_batch(self):
        picked = []
        while len(picked) < self.batch_size:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.pairs)))
            picked.append(self.pairs[self.order.pop(0)])
        x = restorer.images_to_batch([p[0] for p in picked])
        y = restorer.images_to_batch([p[1] for p in picked])
        return x, y


def train_stage(state, f_prev, new_pairs, replay_pairs, cfg: StageConfig,
                iterations, stage: int):
    """One stage of interleaved training; returns (state, per-step loss log)."""
    sampler_new = _BatchSampler(
        new_pairs, cfg.batch_size,
        np.random.default_rng(derive_seed(cfg.seed, "batch-new", stage)))
    sampler_replay = None
    if replay_pairs:
        sampler_replay = _BatchSampler(
            replay_pairs, cfg.batch_size,
            np.random.default_rng(derive_seed(cfg.seed, "batch-replay", stage)))

    log = []
    for it in range(iterations):
        x_new, y_new = sampler_new.next_batch()
        l_new, grads = restorer.restoration_loss_grads(state, x_new, y_new)

        l_replay, l_consist = 0.0, 0.0
        if sampler_replay is not None:
            x_rep, y_rep = sampler_replay.next_batch()
            prev_out = restorer.forward(f_prev, x_rep) if f_prev is not None else None
            l_replay, l_consist, g_rep = restorer.replay_loss_grads(
                state, x_rep, y_rep, prev_out, cfg.lam)
            restorer.add_grads(grads, g_rep)

        l_interleave = l_replay + l_new
        l_total = l_interleave + cfg.lam * l_consist
        if not np.isfinite(l_total):
            raise restorer.NumericalFaultError(
                f"non-finite loss at stage {stage}, iteration {it}")
        state = restorer.sgd_step(state, grads, lr=cfg.lr, momentum=cfg.momentum)
        log.append({
            "l_new": l_new, "l_replay": l_replay, "l_consist": l_consist,
            "l_interleave": l_interleave, "l_total": l_total,
        })
    return state, log


def split_train_test(ds: RainDataset):
    n_test = max(1, int(round(TEST_FRACTION * len(ds))))
    n_train = len(ds) - n_test
    train = RainDataset(spec=ds.spec, pairs=ds.pairs[:n_train],
                        layers=ds.layers[:n_train] if ds.layers else [])
    test = ds.pairs[n_train:]
    return train, test


def evaluate(state, pairs):
    """Mean PSNR/SSIM of clipped restorations over (rainy, clean) pairs."""
    ps, ss = [], []
    for rainy, clean in pairs:
        restored = restorer.restore_image(state, rainy)
        ps.append(psnr(restored, clean))
        ss.append(ssim(restored, clean))
    return float(np.mean(ps)), float(np.mean(ss))


def run_stream(stream: DatasetStream, cfg: StageConfig, method="clgid",
               holdout: RainDataset | None = None) -> StreamReport:
    datasets = [make_dataset(spec) for spec in stream]
    splits = [split_train_test(ds) for ds in datasets]
    if holdout is None:
        holdout = make_holdout(derive_seed(cfg.seed, "holdout"),
                               pair_count=cfg.holdout_pairs,
                               image_size=stream[0].image_size)

    report = StreamReport(method=method, dataset_ids=[s.id for s in stream])
    state = restorer.RestorerState.random_init(derive_seed(cfg.seed, "init", 1))
    f_prev = None
    generators = []  # distinct fitted generators
    mapped = []  # per prior dataset: index into generators
    cache = memgen.ReplayCache(stage=1, entries=[])

    for n, (train_ds, test_pairs) in enumerate(splits, start=1):
        replay = None
        calls = 0
        if cfg.replay and n >= 2:
            slot_gens = [generators[mapped[i]] for i in range(n - 1)]
            if cfg.reuse:
                plan = memgen.reuse_plan(cache, n, len(train_ds))
                replay, cache, calls = memgen.apply_reuse(
                    cache, plan, slot_gens, train_ds,
                    derive_seed(cfg.seed, "replay", n))
            else:
                replay = memgen.build_replay_dataset(
                    slot_gens, train_ds, derive_seed(cfg.seed, "replay", n))
                calls = len(replay)

        sim = similarity(train_ds.rainy_images, replay, n - 1)
        iterations = (scaled_iterations(sim.s_hat, cfg.iterations, cfg.floor)
                      if cfg.speedup else cfg.iterations)

        delta = 1
        if cfg.replay:
            if cfg.selective:
                delta = memgen.select_generator_training(
                    sim.s_hat, cfg.threshold, first_stage=(n == 1))
            if delta:
                generators.append(memgen.fit_generator(train_ds))
                mapped.append(len(generators) - 1)
            else:
                # skipped dataset is represented by its nearest generator
                nearest_slot = int(np.argmin(
                    [s if s is not None else np.inf for s in sim.per_generator]))
                mapped.append(mapped[nearest_slot])

        state, log = train_stage(
            state, f_prev,
            train_ds.pairs,
            replay.pairs if replay is not None else None,
            cfg, iterations, n)
        f_prev = state.copy()

        for d in range(1, n + 1):
            report.memory[(n, d)] = evaluate(state, splits[d - 1][1])
        report.generalization.append(evaluate(state, holdout.pairs))
        report.iterations.append(iterations)
        report.sampler_calls.append(calls)
        report.similarity.append(sim)
        report.deltas.append(delta if cfg.replay else 0)
        report.replay_active.append(replay is not None)
        report.loss_logs.append(log)
    return report


def baseline_sf(stream: DatasetStream, cfg: StageConfig,
                holdout: RainDataset | None = None) -> StreamReport:
    """Sequential fine-tuning: no replay, no distillation, no speedup."""
    sf_cfg = replace(cfg, replay=False, lam=0.0, speedup=False,
                     selective=False, reuse=False)
    return run_stream(stream, sf_cfg, method="sf", holdout=holdout)


def baseline_individual(stream: DatasetStream, cfg: StageConfig,
                        holdout: RainDataset | None = None) -> StreamReport:
    """Fresh network per dataset; diagonal-only memory matrix."""
    datasets = [make_dataset(spec) for spec in stream]
    splits = [split_train_test(ds) for ds in datasets]
    if holdout is None:
        holdout = make_holdout(derive_seed(cfg.seed, "holdout"),
                               pair_count=cfg.holdout_pairs,
                               image_size=stream[0].image_size)
    report = StreamReport(method="individual", dataset_ids=[s.id for s in stream])
    for n, (train_ds, test_pairs) in enumerate(splits, start=1):
        state = restorer.RestorerState.random_init(derive_seed(cfg.seed, "init", n))
        state, log = train_stage(state, None, train_ds.pairs, None, cfg,
                                 cfg.iterations, n)
        report.memory[(n, n)] = evaluate(state, test_pairs)
        report.generalization.append(evaluate(state, holdout.pairs))
        report.iterations.append(cfg.iterations)
        report.sampler_calls.append(0)
        report.similarity.append(SimilarityReport.bootstrap())
        report.deltas.append(0)
        report.replay_active.append(False)
        report.loss_logs.append(log)
    return report


def selective_chain(stream: DatasetStream, threshold: float, seed: int):
    """Run only the generator / replay / similarity chain with the selective
    training policy; returns the per-stage train-a-generator flags.

    Cheap enough to sweep thresholds without touching the restorer.
    """
    datasets = [make_dataset(spec) for spec in stream]
    generators, mapped, deltas = [], [], []
    for n, ds in enumerate(datasets, start=1):
        if n == 1:
            sim = SimilarityReport.bootstrap()
        else:
            slot_gens = [generators[mapped[i]] for i in range(n - 1)]
            replay = memgen.build_replay_dataset(
                slot_gens, ds, derive_seed(seed, "replay", n))
            sim = similarity(ds.rainy_images, replay, n - 1)
        delta = memgen.select_generator_training(
            sim.s_hat, threshold, first_stage=(n == 1))
        deltas.append(delta)
        if delta:
            generators.append(memgen.fit_generator(ds))
            mapped.append(len(generators) - 1)
        else:
            nearest_slot = int(np.argmin(
                [s if s is not None else np.inf for s in sim.per_generator]))
            mapped.append(mapped[nearest_slot])
    return deltas


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def _fmt(x):
    return "%.10g" % x


def stage_flops_estimate(cfg: StageConfig, image_size: int, iterations: int,
                         with_replay: bool) -> float:
    pixels = cfg.batch_size * image_size * image_size
    batches = 2 if with_replay else 1
    return float(iterations * batches * pixels * FLOPS_PER_PIXEL_STEP)


def write_reports(report: StreamReport, cfg: StageConfig, out_dir,
                  image_size: int):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "memory.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "dataset", "psnr", "ssim"])
        for stage in range(1, report.n_stages + 1):
            for d in range(1, stage + 1):
                if (stage, d) in report.memory:
                    p, s = report.memory[(stage, d)]
                    w.writerow([stage, d, _fmt(p), _fmt(s)])
    with open(os.path.join(out_dir, "generalization.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "psnr", "ssim"])
        for stage, (p, s) in enumerate(report.generalization, start=1):
            w.writerow([stage, _fmt(p), _fmt(s)])
    with open(os.path.join(out_dir, "cost.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "iterations", "sampler_calls", "flops_estimate"])
        for stage in range(1, report.n_stages + 1):
            fl = stage_flops_estimate(cfg, image_size,
                                      report.iterations[stage - 1],
                                      report.replay_active[stage - 1])
            w.writerow([stage, report.iterations[stage - 1],
                        report.sampler_calls[stage - 1], _fmt(fl)])

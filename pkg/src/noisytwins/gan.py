"""Toy conditional GAN on 2-D points with the twins regulariser on the generator step."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import TrainConfig, from_dict
from .data import Dataset, EpochSampler
from .latent import EmbeddingTable, MappingNet, embed_labels, map_forward, twin_batch
from .metrics import dispersion_summary, latent_dispersion, mode_coverage
from .mlp import MLP
from .numcore import AdamState, ContractError, Node, NumericError, Rng, Tape, adam_step
from .numcore import tape as T
from .twins_loss import regularized_generator_loss, twins_loss_from_latents

log = logging.getLogger(__name__)

SAMPLE_DIM = 2
LOG_HEADER = ("iter", "L_D", "L_G", "L_NT", "min_class_dispersion", "mean_class_dispersion")
SNAPSHOT_HEADER = ("iter", "mean_coverage", "tail_coverage", "min_class_dispersion", "mean_class_dispersion")


@dataclass
class Generator:
    mapping: MappingNet
    synthesis: MLP

    def params(self) -> list[np.ndarray]:
        return self.mapping.params() + self.synthesis.params()

    def with_params(self, params) -> "Generator":
        n = len(self.mapping.params())
        return Generator(self.mapping.with_params(params[:n]), self.synthesis.with_params(params[n:]))

    def __call__(self, z: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = self.mapping(np.concatenate([z, c], axis=1))
        return self.synthesis(w), w


def d_loss(real_logits: Node, fake_logits: Node) -> Node:
    """Mean of ``softplus(-real) + softplus(fake)``: the stable form of ``-log D(x) - log(1 - D(G(z)))``."""
    return T.add(T.mean_all(T.softplus(T.scale(real_logits, -1.0))), T.mean_all(T.softplus(fake_logits)))


def g_loss(fake_logits: Node) -> Node:
    """Non-saturating generator loss, mean of ``softplus(-fake)``."""
    return T.mean_all(T.softplus(T.scale(fake_logits, -1.0)))


def r1_penalty(disc: MLP, x_real, c, weight: float, tape: Tape | None = None, bound=None) -> Node:
    """``weight / 2 * mean_i |d logit_i / d x_i|^2``, differentiable w.r.t. the discriminator."""
    if weight < 0:
        raise ContractError(f"R1 weight must be >= 0, got {weight}")
    if tape is None:
        tape = x_real.tape if isinstance(x_real, Node) else Tape()
    x = x_real if isinstance(x_real, Node) else tape.leaf(x_real)
    c = c if isinstance(c, Node) else tape.constant(c)
    if bound is None:
        bound = disc.bind(tape)
    logits = disc.apply(T.concat_cols(x, c), bound)
    return _r1_from_logits(logits, x, weight)


def _r1_from_logits(real_logits: Node, x: Node, weight: float) -> Node:
    # rows are independent, so d(sum of logits)/dx stacks the per-row gradients
    (gx,) = real_logits.tape.grad(T.sum_all(real_logits), [x], create_graph=True)
    return T.scale(T.sum_all(T.square(gx)), 0.5 * weight / x.shape[0])


@dataclass
class LogRecord:
    iter: int
    L_D: float
    L_G: float
    L_NT: float
    min_class_dispersion: float
    mean_class_dispersion: float

    def row(self) -> list[str]:
        return [str(self.iter)] + [repr(float(getattr(self, k))) for k in LOG_HEADER[1:]]


@dataclass
class RunLog:
    records: list[LogRecord] = field(default_factory=list)
    snapshots: list[tuple] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_HEADER)
            for r in self.records:
                w.writerow(r.row())

    def write_snapshots(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SNAPSHOT_HEADER)
            for s in self.snapshots:
                w.writerow([str(s[0])] + [repr(float(v)) for v in s[1:]])


@dataclass
class TrainState:
    generator: Generator
    disc: MLP
    table: EmbeddingTable
    adam_g: AdamState
    adam_d: AdamState
    config: TrainConfig
    rng: Rng
    iteration: int = 0
    log: RunLog = field(default_factory=RunLog)


def init_state(config: TrainConfig, class_counts) -> TrainState:
    config.validate()
    m = config.model
    rng = Rng(config.seed)
    init = rng.derive(0)
    table = EmbeddingTable.init(class_counts, m.dim, init, config.noise.sigma, config.noise.alpha, m.embed_init_std)
    mapping = MappingNet.init(m.dim, init, m.mapping_layers, m.mapping_width or None, m.slope)
    synthesis = MLP.init([m.dim] + [m.synthesis_width] * m.synthesis_layers + [SAMPLE_DIM], init, m.slope)
    disc = MLP.init([SAMPLE_DIM + m.dim] + [m.disc_width] * m.disc_layers + [1], init, m.slope)
    gen = Generator(mapping, synthesis)
    o = config.optim
    adam_g = AdamState.for_params(gen.params() + [table.means], lr=o.lr_g, beta1=o.beta1, beta2=o.beta2, eps=o.eps)
    adam_d = AdamState.for_params(disc.params(), lr=o.lr_d, beta1=o.beta1, beta2=o.beta2, eps=o.eps)
    return TrainState(gen, disc, table, adam_g, adam_d, config, rng.derive(1))


def _check(name: str, node: Node) -> float:
    v = node.item()
    if not math.isfinite(v):
        raise NumericError(f"numeric divergence: {name} = {v}")
    return v


def discriminator_step(state: TrainState, x_real, labels, z, noise_fake, noise_real) -> float:
    cfg = state.config
    table, gen = state.table, state.generator
    c_fake = table.means[labels] + noise_fake
    c_real = table.means[labels] + noise_real
    x_fake, _ = gen(z, c_fake)

    bs = len(labels)
    tape = Tape()
    bound = state.disc.bind(tape)
    xr = tape.leaf(x_real)
    # real and fake rows go through D as one stacked batch
    inputs = T.concat_cols(T.concat_rows(xr, tape.constant(x_fake)), tape.constant(np.concatenate([c_real, c_fake])))
    logits = state.disc.apply(inputs, bound)
    real_logits = T.slice_rows(logits, 0, bs)
    loss = d_loss(real_logits, T.slice_rows(logits, bs, 2 * bs))
    ld = _check("L_D", loss)
    total = loss
    if cfg.loss.r1_gamma > 0:
        r1 = _r1_from_logits(real_logits, xr, cfg.loss.r1_gamma)
        _check("R1", r1)
        total = T.add(loss, r1)
    grads = tape.backward(total, bound)
    params, state.adam_d = adam_step(state.disc.params(), grads, state.adam_d)
    state.disc = state.disc.with_params(params)
    return ld


@dataclass
class GeneratorGraph:
    total: Node
    g_loss: Node
    nt_loss: Node
    w: Node
    leaves: list[Node]


def generator_objective(
    tape: Tape, gen: Generator, disc: MLP, means: np.ndarray, labels, z, noise_fake, twins, loss_cfg
) -> GeneratorGraph:
    """Record ``L_G + lam * L_NT`` on ``tape``; leaves are mapping, synthesis, then class means.

    D parameters enter as constants. The noisy embedding reaches the loss both
    through the mapping net and through D's conditioning input, and both paths
    are differentiated.
    """
    map_bound = gen.mapping.bind(tape)
    syn_bound = gen.synthesis.bind(tape)
    means_leaf = tape.leaf(means, name="means")
    disc_bound = [tape.constant(p) for p in disc.params()]

    bs = len(labels)
    c_fake = embed_labels(means_leaf, labels, noise_fake)
    c_a = embed_labels(means_leaf, labels, twins.noise_a)
    c_b = embed_labels(means_leaf, labels, twins.noise_b)
    # main path and both twins share z; map all three as one stacked batch
    w3 = map_forward(gen.mapping, tape.constant(np.concatenate([z, z, z])), T.concat_rows(c_fake, c_a, c_b), tape, map_bound)
    w = T.slice_rows(w3, 0, bs)
    wa = T.slice_rows(w3, bs, 2 * bs)
    wb = T.slice_rows(w3, 2 * bs, 3 * bs)
    x_fake = gen.synthesis.apply(w, syn_bound)
    logits = disc.apply(T.concat_cols(x_fake, c_fake), disc_bound)
    lg = g_loss(logits)
    nt = twins_loss_from_latents(wa, wb, loss_cfg)
    # with lam = 0 the twins loss is logged but kept off the gradient path
    total = regularized_generator_loss(lg, nt, loss_cfg.lam) if loss_cfg.lam > 0 else lg
    return GeneratorGraph(total, lg, nt, w, map_bound + syn_bound + [means_leaf])


def generator_step(state: TrainState, labels, z, noise_fake, twins) -> tuple[float, float, np.ndarray]:
    tape = Tape()
    gen = state.generator
    graph = generator_objective(
        tape, gen, state.disc, state.table.means, labels, z, noise_fake, twins, state.config.loss.twins()
    )
    lg = _check("L_G", graph.g_loss)
    lnt = _check("L_NT", graph.nt_loss)
    grads = tape.backward(graph.total, graph.leaves)
    params, state.adam_g = adam_step(gen.params() + [state.table.means], grads, state.adam_g)
    state.generator = gen.with_params(params[:-1])
    state.table = state.table.with_means(params[-1])
    return lg, lnt, graph.w.value


def train_step(state: TrainState, batch) -> LogRecord:
    """One discriminator update then one generator update; appends and returns the log record."""
    x_real, labels = batch
    cfg = state.config
    if len(labels) != cfg.batch_size:
        raise ContractError(f"batch has {len(labels)} rows, config batch_size is {cfg.batch_size}")
    labels = np.asarray(labels, dtype=np.int64)
    rng, table = state.rng, state.table
    z = rng.normal(len(labels) * table.dim).reshape(len(labels), table.dim)
    noise_fake = table.draw_noise(labels, rng)
    noise_real = table.draw_noise(labels, rng)
    twins = twin_batch(table, labels, z, rng)

    ld = discriminator_step(state, x_real, labels, z, noise_fake, noise_real)
    lg, lnt, w = generator_step(state, labels, z, noise_fake, twins)
    dmin, dmean = dispersion_summary(latent_dispersion(w, labels, table.num_classes))
    state.iteration += 1
    rec = LogRecord(state.iteration, ld, lg, lnt, dmin, dmean)
    state.log.records.append(rec)
    return rec


def generate(state: TrainState, labels, rng: Rng, noisy: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Samples and their latents for the given labels; class means are used without noise unless ``noisy``."""
    table = state.table
    labels = table.check_labels(labels)
    z = rng.normal(len(labels) * table.dim).reshape(len(labels), table.dim)
    c = table.means[labels]
    if noisy:
        c = c + table.draw_noise(labels, rng)
    return state.generator(z, c)


def balanced_labels(num_classes: int, per_class: int) -> np.ndarray:
    return np.repeat(np.arange(num_classes), per_class)


def snapshot(state: TrainState, dataset: Dataset, per_class: int = 50, tail: int = 3) -> tuple:
    cfg = state.config
    labels = balanced_labels(state.table.num_classes, per_class)
    x, w = generate(state, labels, Rng(cfg.eval.seed, (state.iteration,)))
    cov = mode_coverage(x, labels, dataset.spec, cfg.eval.coverage_radius)
    dmin, dmean = dispersion_summary(latent_dispersion(w, labels, state.table.num_classes))
    return (state.iteration, float(cov.mean()), float(cov[-tail:].mean()), dmin, dmean)


def save_state(path, state: TrainState) -> None:
    sections: dict = {"config": json.dumps(state.config.to_dict(), sort_keys=True)}
    sections.update(ckpt.embedding_sections(state.table))
    sections.update(ckpt.mlp_sections(state.generator.mapping, "mapping"))
    sections.update(ckpt.mlp_sections(state.generator.synthesis, "synthesis"))
    sections.update(ckpt.mlp_sections(state.disc, "disc"))
    for name, adam in (("adam_g", state.adam_g), ("adam_d", state.adam_d)):
        sections[f"{name}.hyper"] = np.array([[adam.lr, adam.beta1, adam.beta2, adam.eps, adam.step]])
        for i, (m, v) in enumerate(zip(adam.m, adam.v)):
            sections[f"{name}.m{i}"] = m
            sections[f"{name}.v{i}"] = v
    sections["state.iteration"] = np.array([[state.iteration]], dtype=np.float64)
    ckpt.write_sections(path, sections)


def load_state(path) -> TrainState:
    s = ckpt.read_sections(path)
    if "config" not in s:
        raise ckpt.FormatError(f"{path}: missing config section")
    config = from_dict(json.loads(s["config"]))
    table = ckpt.embedding_from_sections(s)
    gen = Generator(ckpt.mlp_from_sections(s, "mapping", MappingNet), ckpt.mlp_from_sections(s, "synthesis"))
    disc = ckpt.mlp_from_sections(s, "disc")
    adams = []
    for name in ("adam_g", "adam_d"):
        lr, b1, b2, eps, step = s[f"{name}.hyper"][0]
        ms, vs, i = [], [], 0
        while f"{name}.m{i}" in s:
            ms.append(s[f"{name}.m{i}"])
            vs.append(s[f"{name}.v{i}"])
            i += 1
        adams.append(AdamState(lr, b1, b2, eps, int(step), ms, vs))
    it = int(s["state.iteration"][0, 0])
    return TrainState(gen, disc, table, adams[0], adams[1], config, Rng(config.seed, (1, it)), it)


@dataclass
class TrainResult:
    state: TrainState
    log: RunLog
    checkpoints: list[Path] = field(default_factory=list)


def train(config: TrainConfig, dataset: Dataset, out_dir=None, progress_every: int = 0) -> TrainResult:
    """Run ``config.iterations`` steps; writes checkpoints/logs into ``out_dir`` when given.

    On numeric divergence the partial log and a checkpoint are flushed before
    the error propagates.
    """
    config.validate()
    state = init_state(config, dataset.class_counts())
    sampler = EpochSampler(dataset, Rng(config.seed, (2,)), config.batch_size, config.sampling)
    out = Path(out_dir) if out_dir is not None else None
    checkpoints: list[Path] = []

    def flush(tag: str):
        if out is None:
            return
        state.log.write_csv(out / "runlog.csv")
        if config.eval_every:
            state.log.write_snapshots(out / "snapshots.csv")
        path = out / f"{tag}.ckpt"
        save_state(path, state)
        checkpoints.append(path)

    try:
        for _ in range(config.iterations):
            train_step(state, sampler.next())
            it = state.iteration
            if config.eval_every and it % config.eval_every == 0:
                state.log.snapshots.append(snapshot(state, dataset))
            if out is not None and config.checkpoint_every and it % config.checkpoint_every == 0:
                path = out / f"iter_{it:07d}.ckpt"
                save_state(path, state)
                checkpoints.append(path)
            if progress_every and it % progress_every == 0:
                r = state.log.records[-1]
                log.info("iter %d L_D %.4f L_G %.4f L_NT %.4f", it, r.L_D, r.L_G, r.L_NT)
    except NumericError:
        flush("partial")
        raise
    flush("final")
    return TrainResult(state, state.log, checkpoints)

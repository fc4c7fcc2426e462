"""Glue between trained models and the metrics: generators, reference sets,
repeated evaluation and blend-schedule sweeps."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .composition import BlendSchedule, dual_sample_loop, sample_interaction
from .corpus import CorpusSpec, LabelSet, canonical_pair, generate_corpus, pair_tensors
from .denoiser import ConditionTriple, DenoiserParams
from .diffusion import NoiseSchedule, SamplerConfig
from .guidance import GuidanceWeights
from .metrics import (
    DeskEmbedder,
    MetricReport,
    batch_condition,
    diversity,
    eid_protocol,
    fid,
    multimodality,
    r_precision_mm_dist,
    triple_seed,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalSettings:
    eval_samples: int = 64  # size of the held-out reference set
    eval_seed_offset: int = 1  # reference corpus seed = corpus seed + offset
    eid_n: int = 32
    eid_conditions: int = 4
    repeats: int = 10
    diversity_pairs: int = 300
    mm_pairs: int = 10
    embed_dim: int = 64
    embed_seed: int = 0
    embed_recipe: str = "root_relative"

    def embedder(self) -> DeskEmbedder:
        return DeskEmbedder(self.embed_dim, self.embed_seed, self.embed_recipe)


def interaction_generator(model: DenoiserParams, weights: GuidanceWeights, sched: NoiseSchedule, sampler: SamplerConfig, frames: int):
    """``generate(cond, seed) -> (x_a, x_b)`` with the interaction model alone."""

    def generate(cond: ConditionTriple, seed: int):
        n = len(np.atleast_1d(cond.interaction))
        cfg = dataclasses.replace(sampler, seed=int(seed))
        return sample_interaction(model, weights, cond, (n, frames, model.config.width), cfg, sched)

    return generate


def composed_generator(
    model: DenoiserParams,
    weights: GuidanceWeights,
    prior: DenoiserParams,
    blend: BlendSchedule,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    frames: int,
    prior_scale: float = 1.0,
    blend_point: str = "post_cfg",
):
    def generate(cond: ConditionTriple, seed: int):
        n = len(np.atleast_1d(cond.interaction))
        cfg = dataclasses.replace(sampler, seed=int(seed))
        return dual_sample_loop(model, weights, prior, cond, blend, cfg, sched, (n, frames, model.config.width), prior_scale, blend_point)

    return generate


@dataclass
class Reference:
    """Held-out ground-truth pairs and the canonical embedding of every label triple."""

    x_a: np.ndarray
    x_b: np.ndarray
    ids: np.ndarray
    embeddings: np.ndarray
    triples: list
    table: np.ndarray
    labels: LabelSet

    def triple_index(self, ids) -> np.ndarray:
        lookup = {t: k for k, t in enumerate(self.triples)}
        return np.array([lookup[tuple(int(v) for v in row)] for row in np.asarray(ids)])


def build_reference(spec: CorpusSpec, settings: EvalSettings, embedder: DeskEmbedder | None = None) -> Reference:
    embedder = embedder or settings.embedder()
    labels = LabelSet.from_spec(spec)
    ref_spec = dataclasses.replace(spec, sample_count=settings.eval_samples, seed=spec.seed + settings.eval_seed_offset)
    xa, xb, ids = pair_tensors(generate_corpus(ref_spec))
    triples, rows = [], []
    for i in labels.interaction_ids:
        for a in labels.individual_ids:
            for b in labels.individual_ids:
                names = (labels.by_id(i).name, labels.by_id(a).name, labels.by_id(b).name)
                pair = canonical_pair(spec, names)
                triples.append((int(i), int(a), int(b)))
                rows.append((pair_tensors([pair])[0][0], pair_tensors([pair])[1][0]))
    ca = np.stack([r[0] for r in rows])
    cb = np.stack([r[1] for r in rows])
    return Reference(xa, xb, ids, embedder.embed(xa, xb), triples, embedder.embed(ca, cb), labels)


def eid_triples(ref: Reference, count: int, seed: int) -> list[tuple[int, int, int]]:
    """Distinct label triples of the reference set, a seeded subset of size ``count``."""
    distinct = sorted({tuple(int(v) for v in row) for row in ref.ids})
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), 0xE1D]))
    pick = np.sort(rng.choice(len(distinct), size=min(count, len(distinct)), replace=False))
    return [distinct[k] for k in pick]


def evaluate_once(
    generate,
    ref: Reference,
    settings: EvalSettings,
    seed: int,
    compose_generate=None,
    embedder: DeskEmbedder | None = None,
    gt_sets=None,
) -> dict:
    """One evaluation run. With ``compose_generate`` the sample-quality metrics
    describe the composed generator and EID uses the composed-vs-plain protocol."""
    embedder = embedder or settings.embedder()
    target = compose_generate or generate
    cond = ConditionTriple.from_array(ref.ids)
    emb = embedder.embed(*target(cond, seed))
    triples = eid_triples(ref, settings.eid_conditions, seed)
    if gt_sets is None:
        gt_sets = [embedder.embed(*generate(batch_condition(t, settings.eid_n), triple_seed(seed, k))) for k, t in enumerate(triples)]
    e, _ = eid_protocol(
        generate, triples, ref.labels.individual_ids, settings.eid_n, seed,
        compose_generate=compose_generate, embed=embedder.embed, gt_sets=gt_sets,
    )
    top1, top2, top3, mm = r_precision_mm_dist(emb, ref.triple_index(ref.ids), ref.table)
    return {
        "eid": e,
        "fid": fid(ref.embeddings, emb),
        "diversity": diversity(emb, settings.diversity_pairs, seed),
        "multimodality": multimodality(gt_sets, settings.mm_pairs, seed),
        "r_precision_top1": top1,
        "r_precision_top2": top2,
        "r_precision_top3": top3,
        "mm_dist": mm,
    }


def _counts(ref: Reference, settings: EvalSettings) -> dict:
    n = len(ref.ids)
    k = min(settings.eid_conditions, len({tuple(r) for r in ref.ids.tolist()}))
    return {
        "eid": k * settings.eid_n,
        "fid": n,
        "diversity": settings.diversity_pairs,
        "multimodality": k,
        "r_precision": n,
        "mm_dist": n,
        "repeats": settings.repeats,
    }


def run_seeds(seed: int, repeats: int) -> list[int]:
    return [triple_seed(seed, 1_000_000 + r) for r in range(repeats)]


def evaluate(generate, ref: Reference, settings: EvalSettings, seed: int, compose_generate=None) -> MetricReport:
    """Metric report over ``settings.repeats`` independently seeded runs."""
    embedder = settings.embedder()
    runs = []
    for r, s in enumerate(run_seeds(seed, settings.repeats)):
        runs.append(evaluate_once(generate, ref, settings, s, compose_generate, embedder))
        log.info("evaluation run %d/%d done", r + 1, settings.repeats)
    return MetricReport.from_runs(runs, _counts(ref, settings))


SWEEP_COLUMNS = ("scheduler", "lambda", "r_precision_top3", "fid", "eid")


def sweep(
    model: DenoiserParams,
    weights: GuidanceWeights,
    prior: DenoiserParams,
    ref: Reference,
    settings: EvalSettings,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    frames: int,
    grid: Sequence[BlendSchedule],
    seed: int,
    prior_scale: float = 1.0,
) -> list[dict]:
    """Evaluate the composed generator for every blend schedule in ``grid``.

    EID compares plain interaction samples with composed samples under
    identical labels and seeds; ``D_GT`` is shared across the grid.
    """
    embedder = settings.embedder()
    plain = interaction_generator(model, weights, sched, sampler, frames)
    seeds = run_seeds(seed, settings.repeats)
    gt_cache = {}
    for s in seeds:
        triples = eid_triples(ref, settings.eid_conditions, s)
        gt_cache[s] = [embedder.embed(*plain(batch_condition(t, settings.eid_n), triple_seed(s, k))) for k, t in enumerate(triples)]
    rows = []
    for blend in grid:
        comp = composed_generator(model, weights, prior, blend, sched, sampler, frames, prior_scale)
        runs = [evaluate_once(plain, ref, settings, s, comp, embedder, gt_cache[s]) for s in seeds]
        rep = MetricReport.from_runs(runs, _counts(ref, settings))
        row = {"scheduler": blend.kind, "lambda": blend.lam}
        for key in SWEEP_COLUMNS[2:]:
            row[key] = getattr(rep, key)
            row[key + "_ci"] = rep.half_widths[key]
        rows.append(row)
        log.info("sweep %s lambda=%g: eid=%.4f fid=%.4f", blend.kind, blend.lam, row["eid"], row["fid"])
    return rows

"""Command-line entry point: ``duet <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import kernels
from .composition import dual_sample_loop, sample_interaction
from .corpus import CorpusSpec, LabelSet, generate_corpus, pair_tensors, read_corpus, write_corpus
from .denoiser import ConditionTriple, FeatureStats, init_params, load_checkpoint, save_checkpoint
from .errors import ConfigError, DuetError, IncompatibleCheckpoint, IoError
from .motion import default_skeleton, export_csv, from_tensor, load_motion_json, save_motion_json
from .pipeline import build_reference, composed_generator, evaluate, interaction_generator, sweep
from .train import train

log = logging.getLogger("duet")

EXIT_ERROR, EXIT_CONFIG, EXIT_IO, EXIT_CHECKPOINT = 1, 2, 3, 4


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", type=Path, help="JSON config file; overrides built-in defaults")
    g.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--threads", type=int, help="worker threads for parallel kernels (default: all cores)")


def _guidance(p: argparse.ArgumentParser) -> None:
    p.add_argument("--wc", type=float, help="guidance weight on the full condition")
    p.add_argument("--wI", type=float, help="guidance weight on the interaction-only condition")
    p.add_argument("--wi", type=float, help="guidance weight on the individual-only condition")
    p.add_argument("--ddim-steps", type=int, help="number of deterministic sampling steps")


def _blend(p: argparse.ArgumentParser, required_prior: bool) -> None:
    p.add_argument("--prior-ckpt", type=Path, required=required_prior, help="individual prior checkpoint")
    p.add_argument("--blend-kind", choices=["constant", "linear", "exponential", "inverse_exponential", "inverse-exponential"],
                   help="prior weight schedule")
    p.add_argument("--blend-lambda", type=float, help="schedule parameter (constant weight or exponential rate)")
    p.add_argument("--prior-scale", type=float, help="classifier-free guidance scale of the prior")
    p.add_argument("--blend-point", choices=["post_cfg", "pre_cfg"], help="blend after (default) or before guidance")


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="duet", description="Two-person motion diffusion with individual-prior blending.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth-data", help="write a synthetic two-person corpus")
    p.add_argument("--spec", type=Path, help="corpus spec JSON (merged over the config's corpus section)")
    p.add_argument("--samples", type=int, help="number of interaction samples")
    _common(p)

    p = sub.add_parser("train", help="train the interaction model and/or the individual prior")
    p.add_argument("--corpus", type=Path, help="corpus directory written by synth-data")
    p.add_argument("--model", choices=["interaction", "prior", "both"], default="both", help="which model to train")
    p.add_argument("--epochs", type=int, help="training epochs")
    _common(p)

    p = sub.add_parser("sample", help="sample pairs from the interaction model")
    p.add_argument("--interaction-ckpt", type=Path, help="interaction model checkpoint")
    p.add_argument("--labels", help="comma-separated interaction,individual_a,individual_b label names")
    p.add_argument("--count", type=int, help="number of pairs")
    _guidance(p)
    _common(p)

    p = sub.add_parser("compose", help="sample pairs with the interaction model blended with the prior")
    p.add_argument("--interaction-ckpt", type=Path, help="interaction model checkpoint")
    p.add_argument("--labels", help="comma-separated interaction,individual_a,individual_b label names")
    p.add_argument("--count", type=int, help="number of pairs")
    _blend(p, required_prior=False)
    _guidance(p)
    _common(p)

    p = sub.add_parser("eval", help="compute a metric report; with --prior-ckpt the composed sampler is evaluated")
    p.add_argument("--interaction-ckpt", type=Path, help="interaction model checkpoint")
    p.add_argument("--repeats", type=int, help="independently seeded evaluation runs")
    _blend(p, required_prior=False)
    _guidance(p)
    _common(p)

    p = sub.add_parser("export", help="convert a motion JSON file to CSV")
    p.add_argument("--input", type=Path, required=True, help="motion JSON file")
    _common(p)

    p = sub.add_parser("sweep", help="evaluate a grid of blend schedules and write a summary CSV")
    p.add_argument("--interaction-ckpt", type=Path, help="interaction model checkpoint")
    p.add_argument("--prior-ckpt", type=Path, help="individual prior checkpoint")
    p.add_argument("--kinds", help="comma-separated schedule kinds")
    p.add_argument("--lambdas", help="comma-separated constant weights")
    p.add_argument("--exp-lambdas", help="comma-separated rates for the exponential kinds")
    p.add_argument("--repeats", type=int, help="independently seeded evaluation runs per grid point")
    p.add_argument("--prior-scale", type=float, help="classifier-free guidance scale of the prior")
    _guidance(p)
    _common(p)
    return ap


def _floats(text):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    o = {
        "seed": g("seed"),
        "threads": g("threads"),
        "train.epochs": g("epochs"),
        "corpus.sample_count": g("samples"),
        "sampler.count": g("count"),
        "sampler.ddim_steps": g("ddim_steps"),
        "guidance.w_c": g("wc"),
        "guidance.w_I": g("wI"),
        "guidance.w_i": g("wi"),
        "blend.kind": g("blend_kind"),
        "blend.lambda": g("blend_lambda"),
        "blend.prior_scale": g("prior_scale"),
        "blend.blend_point": g("blend_point"),
        "eval.repeats": g("repeats"),
        "sweep.lambdas": _floats(g("lambdas")),
        "sweep.exp_lambdas": _floats(g("exp_lambdas")),
    }
    if g("kinds"):
        o["sweep.kinds"] = [k.strip() for k in args.kinds.split(",") if k.strip()]
    if g("labels"):
        o["sampler.labels"] = [k.strip() for k in args.labels.split(",")]
    if g("corpus"):
        o["paths.corpus"] = str(args.corpus)
    if g("interaction_ckpt"):
        o["paths.interaction_ckpt"] = str(args.interaction_ckpt)
    if g("prior_ckpt"):
        o["paths.prior_ckpt"] = str(args.prior_ckpt)
    return o


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out is not None else Path(default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _load(path, role: str):
    p = Path(path)
    if not p.exists():
        raise IoError(f"checkpoint {p} not found; run `duet train` first or pass --{role}-ckpt")
    params, _, meta = load_checkpoint(p)
    expected = "interaction" if role == "interaction" else "individual"
    if params.config.variant != expected:
        raise IncompatibleCheckpoint(f"{p} holds a {params.config.variant} model, expected {expected}")
    return params, meta


def _spec_from(meta: dict, cfg: dict) -> CorpusSpec:
    extra = meta.get("extra", {})
    return CorpusSpec.from_dict(extra["corpus_spec"]) if "corpus_spec" in extra else C.corpus_spec(cfg)


def _condition(cfg: dict, spec: CorpusSpec, n: int) -> ConditionTriple:
    labels = LabelSet.from_spec(spec)
    names = cfg["sampler"]["labels"]
    try:
        ids = (labels.interaction(names[0]).id, labels.individual(names[1]).id, labels.individual(names[2]).id)
    except ValueError:
        raise ConfigError(f"unknown label in {names}; interactions {list(labels.interactions)}, individuals {list(labels.individuals)}") from None
    return ConditionTriple(*(np.full(n, i) for i in ids))


def _write_motions(out: Path, pair, spec: CorpusSpec) -> list[str]:
    skel = default_skeleton()
    files = []
    for k in range(pair[0].shape[0]):
        for tag, x in zip("ab", pair):
            name = f"sample_{k:03d}_{tag}.json"
            save_motion_json(out / name, from_tensor(x[k], skel.joint_count, spec.frame_rate), skel)
            files.append(name)
    return files


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth_data(args, cfg):
    spec = C.corpus_spec(cfg)
    out = _out_dir(args, cfg["paths"]["corpus"])
    write_corpus(generate_corpus(spec), out, spec)
    log.info("wrote %d samples to %s", spec.sample_count, out)


def cmd_train(args, cfg):
    corpus_dir = Path(cfg["paths"]["corpus"])
    if not (corpus_dir / "index.json").exists():
        raise IoError(f"no corpus at {corpus_dir}; run `duet synth-data --out {corpus_dir}` first or pass --corpus")
    corpus = read_corpus(corpus_dir)
    xa, xb, ids = pair_tensors(corpus.samples)
    out = _out_dir(args, str(Path(cfg["paths"]["interaction_ckpt"]).parent))
    sched = C.schedule(cfg)
    settings = C.train_settings(cfg)
    extra = {"corpus_spec": corpus.spec.to_dict(), "labels": corpus.labels.to_dict()}
    roles = ["interaction", "prior"] if args.model == "both" else [args.model]
    stats = FeatureStats.fit(xa, xb)  # shared so the two models can be composed
    for role in roles:
        mcfg = C.model_config(cfg, role, corpus.labels.size, xa.shape[-1])
        params = init_params(mcfg, cfg["seed"] + (0 if role == "interaction" else 1))
        params.stats = stats
        data = (xa, xb, ids) if role == "interaction" else (np.concatenate([xa, xb]), np.concatenate([ids[:, 1], ids[:, 2]]))
        progress = lambda r: log.info("%s epoch %d: l2=%.5f total=%.5f", role, r.epoch, r.l2, r.total)  # noqa: E731
        params, history, opt = train(params, data, settings, sched, corpus.skeleton, progress=progress)
        save_checkpoint(out / f"{role}.npz", params, opt, settings.epochs, {**extra, "role": role})
        _write_csv(out / f"{role}_loss.csv", ["epoch", "l2", "total", "lr"], [(h.epoch, h.l2, h.total, h.lr) for h in history])
        log.info("wrote %s", out / f"{role}.npz")


def _guided_setup(cfg):
    model, meta = _load(cfg["paths"]["interaction_ckpt"], "interaction")
    spec = _spec_from(meta, cfg)
    return model, spec, C.schedule(cfg), C.guidance(cfg)


def _manifest(cfg, spec, files, **extra):
    return {"labels": cfg["sampler"]["labels"], "seed": cfg["seed"], "frames": spec.frames_per_sample, "files": files, **extra}


def cmd_sample(args, cfg):
    model, spec, sched, weights = _guided_setup(cfg)
    n = int(cfg["sampler"]["count"])
    pair = sample_interaction(model, weights, _condition(cfg, spec, n), (n, spec.frames_per_sample, model.config.width), C.sampler(cfg), sched)
    out = _out_dir(args, "samples")
    _write_json(out / "manifest.json", _manifest(cfg, spec, _write_motions(out, pair, spec), guidance=cfg["guidance"]))


def cmd_compose(args, cfg):
    model, spec, sched, weights = _guided_setup(cfg)
    prior, _ = _load(cfg["paths"]["prior_ckpt"], "prior")
    n = int(cfg["sampler"]["count"])
    b = cfg["blend"]
    pair = dual_sample_loop(
        model, weights, prior, _condition(cfg, spec, n), C.blend(cfg), C.sampler(cfg), sched,
        (n, spec.frames_per_sample, model.config.width), float(b["prior_scale"]), b["blend_point"],
    )
    out = _out_dir(args, "samples")
    _write_json(out / "manifest.json", _manifest(cfg, spec, _write_motions(out, pair, spec), guidance=cfg["guidance"], blend=b))


_REPORT_KEYS = ("eid", "fid", "diversity", "multimodality", "r_precision_top1", "r_precision_top2", "r_precision_top3", "mm_dist")


def cmd_eval(args, cfg):
    model, spec, sched, weights = _guided_setup(cfg)
    settings = C.eval_settings(cfg)
    frames = spec.frames_per_sample
    plain = interaction_generator(model, weights, sched, C.sampler(cfg), frames)
    composed, blend_row = None, ("none", "")
    if args.prior_ckpt is not None:
        prior, _ = _load(cfg["paths"]["prior_ckpt"], "prior")
        b = cfg["blend"]
        blend = C.blend(cfg)
        composed = composed_generator(model, weights, prior, blend, sched, C.sampler(cfg), frames, float(b["prior_scale"]), b["blend_point"])
        blend_row = (blend.kind, blend.lam)
    ref = build_reference(spec, settings)
    report = evaluate(plain, ref, settings, int(cfg["seed"]), composed)
    out = _out_dir(args, "eval")
    _write_json(out / "report.json", report.to_dict())
    header = ["model", "scheduler", "lambda"] + [k for key in _REPORT_KEYS for k in (key, key + "_ci")]
    row = ["composed" if composed else "interaction", *blend_row]
    for key in _REPORT_KEYS:
        row += [getattr(report, key), report.half_widths[key]]
    _write_csv(out / "report.csv", header, [row])


def cmd_export(args, cfg):
    src = Path(args.input)
    if not src.exists():
        raise IoError(f"motion file {src} not found")
    try:
        motion, _ = load_motion_json(src)
    except (json.JSONDecodeError, KeyError) as exc:
        raise IoError(f"{src} is not a motion JSON file ({exc})") from None
    out = _out_dir(args, str(src.parent))
    export_csv(motion, out / (src.stem + ".csv"))


def cmd_sweep(args, cfg):
    model, spec, sched, weights = _guided_setup(cfg)
    prior, _ = _load(cfg["paths"]["prior_ckpt"], "prior")
    settings = C.eval_settings(cfg)
    ref = build_reference(spec, settings)
    rows = sweep(model, weights, prior, ref, settings, sched, C.sampler(cfg), spec.frames_per_sample, C.sweep_grid(cfg),
                 int(cfg["seed"]), float(cfg["blend"]["prior_scale"]))
    out = _out_dir(args, "sweep")
    _write_csv(out / "sweep.csv", ["scheduler", "lambda", "r_precision_top3", "fid", "eid"],
               [(r["scheduler"], r["lambda"], r["r_precision_top3"], r["fid"], r["eid"]) for r in rows])
    _write_json(out / "sweep.json", rows)


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "compose": cmd_compose,
    "eval": cmd_eval,
    "export": cmd_export,
    "sweep": cmd_sweep,
}


def _setup_logging() -> None:
    level = os.environ.get("DUET_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    if level not in levels:
        log.warning("DUET_LOG=%s not recognised; using info", level)


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    _setup_logging()
    try:
        overrides = _overrides(args)
        if getattr(args, "spec", None) is not None:
            for k, v in C.load_file(args.spec).items():
                overrides[f"corpus.{k}"] = v
        cfg = C.build(args.config, overrides)
        if cfg["threads"] is not None:
            kernels.set_threads(int(cfg["threads"]))
        log.info("effective config:\n%s", C.dump(cfg))
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"duet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IoError as exc:
        print(f"duet: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except IncompatibleCheckpoint as exc:
        print(f"duet: incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except DuetError as exc:
        print(f"duet: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"duet: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())

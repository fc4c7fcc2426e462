import numpy as np
import pytest

from duet.corpus import CorpusSpec, generate_corpus, pair_tensors
from duet.denoiser import DenoiserConfig, init_params
from duet.diffusion import build_cosine_schedule
from duet.motion import default_skeleton


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture(scope="session")
def sched():
    return build_cosine_schedule(1000, 0.008)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusSpec(sample_count=16, seed=3))


@pytest.fixture(scope="session")
def small_tensors(small_corpus):
    return pair_tensors(small_corpus)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_config(variant="interaction", **kw):
    base = dict(layers=1, latent_dim=8, heads=2, variant=variant)
    base.update(kw)
    return DenoiserConfig(**base)


@pytest.fixture(scope="session")
def tiny_pair_model():
    return init_params(tiny_config(), seed=5)


@pytest.fixture(scope="session")
def tiny_prior():
    return init_params(tiny_config("individual"), seed=6)


TINY_CLI_CONFIG = {
    "corpus": {"sample_count": 8, "frames_per_sample": 8},
    "interaction": {"layers": 1, "latent_dim": 8, "heads": 2},
    "prior": {"layers": 1, "latent_dim": 8, "heads": 2},
    "train": {"epochs": 2, "batch_size": 4, "warmup_epochs": 1},
    "sampler": {"ddim_steps": 4, "count": 2},
    "eval": {"eval_samples": 8, "eid_n": 4, "eid_conditions": 2, "repeats": 2, "diversity_pairs": 10, "mm_pairs": 3},
    "sweep": {"kinds": ["constant", "exponential"], "lambdas": [0.0, 0.5], "exp_lambdas": [0.01]},
}


def run_cli_chain(root, config_path):
    """Every CLI command once, writing under ``root``; returns exit codes by step."""
    from duet.cli import main

    c = ["--config", str(config_path)]
    ck = ["--interaction-ckpt", str(root / "ckpt" / "interaction.npz")]
    pk = ["--prior-ckpt", str(root / "ckpt" / "prior.npz")]
    steps = {
        "synth-data": ["synth-data", *c, "--out", str(root / "corpus")],
        "train": ["train", *c, "--corpus", str(root / "corpus"), "--out", str(root / "ckpt")],
        "sample": ["sample", *c, *ck, "--out", str(root / "sample")],
        "compose": ["compose", *c, *ck, *pk, "--blend-kind", "exponential", "--blend-lambda", "0.01", "--out", str(root / "compose")],
        "compose-zero": ["compose", *c, *ck, *pk, "--blend-kind", "constant", "--blend-lambda", "0", "--out", str(root / "compose0")],
        "eval": ["eval", *c, *ck, "--out", str(root / "eval")],
        "eval-composed": ["eval", *c, *ck, *pk, "--out", str(root / "eval_composed")],
        "export": ["export", *c, "--input", str(root / "sample" / "sample_000_a.json"), "--out", str(root / "export")],
        "sweep": ["sweep", *c, *ck, *pk, "--out", str(root / "sweep")],
    }
    return {name: main(argv) for name, argv in steps.items()}


@pytest.fixture(scope="session")
def cli_runs(tmp_path_factory):
    """Two independent runs of the whole CLI chain with identical config and seeds."""
    import json

    base = tmp_path_factory.mktemp("cli")
    cfg = base / "tiny.json"
    cfg.write_text(json.dumps(TINY_CLI_CONFIG))
    runs = []
    for tag in ("run1", "run2"):
        root = base / tag
        runs.append((root, run_cli_chain(root, cfg)))
    return base, cfg, runs


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

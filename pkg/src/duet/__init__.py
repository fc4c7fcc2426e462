"""Two-person motion diffusion: a Siamese interaction denoiser with
multi-weight guidance, blended at sampling time with a single-person prior."""

from .composition import BlendSchedule, blend_weight, composed_x0, dual_sample_loop
from .corpus import CorpusSpec, generate_corpus
from .denoiser import ConditionTriple, DenoiserConfig, DenoiserParams, denoise_pair, denoise_single, init_params
from .diffusion import SamplerConfig, build_cosine_schedule, sample_loop
from .guidance import GuidanceWeights, guided_x0
from .metrics import DeskEmbedder, MetricReport, eid, fid

__version__ = "0.1.0"

__all__ = [
    "BlendSchedule",
    "ConditionTriple",
    "CorpusSpec",
    "DenoiserConfig",
    "DenoiserParams",
    "DeskEmbedder",
    "GuidanceWeights",
    "MetricReport",
    "SamplerConfig",
    "blend_weight",
    "build_cosine_schedule",
    "composed_x0",
    "denoise_pair",
    "denoise_single",
    "dual_sample_loop",
    "eid",
    "fid",
    "generate_corpus",
    "guided_x0",
    "init_params",
    "sample_loop",
]

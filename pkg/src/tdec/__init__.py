"""Template-enforced decoding engine and its evaluation harness."""

from .backend import CharTokenizer, HttpBackend, HttpBackendConfig, ToyTableLM
from .generator import GenerationRecord, PromptAssembly, assemble_prompt, extract_fields, generate
from .sampling import SamplingParams, make_rng, sample
from .template_fsm import (
    DecodingController,
    Phase,
    StepConstraint,
    TemplateSpec,
    apply_constraint,
    new_controller,
)

__version__ = "0.1.0"

__all__ = [
    "CharTokenizer",
    "DecodingController",
    "GenerationRecord",
    "HttpBackend",
    "HttpBackendConfig",
    "Phase",
    "PromptAssembly",
    "SamplingParams",
    "StepConstraint",
    "TemplateSpec",
    "ToyTableLM",
    "apply_constraint",
    "assemble_prompt",
    "extract_fields",
    "generate",
    "make_rng",
    "new_controller",
    "sample",
    "__version__",
]

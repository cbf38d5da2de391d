"""Concept representations in reasoning traces over obfuscated BlocksWorld.

Submodules:

* ``blocksworld`` -- STRIPS domain, verifier, BFS solver, puzzle generator
* ``namings``     -- surface-word tables for obfuscated variants
* ``prompts``     -- prompt rendering and plan parsing
* ``tracestore``  -- activation dump format and concept-token matching
* ``replab``      -- extraction, centering, cross-naming averages, curves, PCA
* ``steering``    -- steering, symbolic patching and negative steering hooks
* ``toy``         -- small deterministic transformer backend
* ``stats``       -- one-sample t-tests on accuracy deltas
* ``pipeline``    -- manifest-driven experiments on the toy backend
"""

from .blocksworld import (
    EXAMPLE_PLAN,
    EXAMPLE_PUZZLE,
    Action,
    Atom,
    Puzzle,
    State,
    Verdict,
    apply,
    bfs_solve,
    generate_puzzle,
    is_applicable,
    verify_plan,
)
from .namings import IDENTITY, Naming, builtin_naming
from .prompts import parse_plan, render_prompt
from .replab import ConceptRepresentation, ExtractionSpec, center, cosine, cross_naming_average, extract, pca_project
from .stats import one_sample_t, t_cdf
from .steering import SteeringSpec, apply_negative, apply_patching, apply_steering, steer_update
from .toy import ToyConfig, ToyTransformer
from .tracestore import ActivationDump, match_concept, read_dump, write_dump

__version__ = "0.1.0"

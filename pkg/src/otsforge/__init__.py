"""otsforge: operation-tree symbolic regression toolkit."""

from .errors import (
    CorruptShard,
    DegenerateTarget,
    GenerationExhausted,
    NoCandidates,
    NoFinitePoints,
    NotAnOperator,
    OtsForgeError,
    RationalityError,
    ReconstructionError,
    SchemaMismatch,
    UnknownSymbol,
)
from .fitting import FitConfig, FitResult, fit, fit_batch, fit_first_order
from .funcimg import FuncImg, RenderConfig, add_noise, meshgrid, read_fimg, render, write_fimg
from .metrics import EvalPair, EvalSet, acc_r, formula_s_rl, levenshtein, s_rl
from .numeric import evaluate, grad_constants
from .render import render_formula, render_skeleton, simplify
from .search import CandidateSource, Solution, enumerate_candidates, solve
from .tree import OpTree, TreeNode, build_tree, decode_bfs, encode_bfs, is_reconstructable, strip_padding
from .treegen import (
    GenConfig,
    Skeleton,
    assign_symbols,
    generate_valid_tree,
    rng_stream,
    sample_constants,
    sample_skeleton,
)
from .vocab import OperatorSpec, Vocab, build_default_vocab, build_vocab, default_vocab, lookup

__version__ = "0.1.0"

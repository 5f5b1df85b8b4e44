"""Gaussian-process regression with grid spectral mixture kernels and
distributed, communication-aware weight learning."""

from .errors import (
    CodecError,
    ConfigError,
    ConicBuildError,
    DataFormatError,
    FactorizationError,
    GsmgpError,
    MemoryBudgetError,
    ProtocolError,
    SolverError,
    ZeroSpacingError,
)
from .kernel import (
    Dataset,
    GridSpec,
    KernelWorkspace,
    LowRank,
    build_grid,
    build_workspace,
    eval_gsm_md,
    eval_gsmp,
    gram_matrices,
    gsm_md_spectral_density,
    highest_frequency,
    lowrank_factor,
    spectral_density,
    weighted_gram,
)
from .gp import GPModel, Posterior, grad_h, mse, nll, predict, split_g_h
from .sca import BlockPartition, ScaTrace, dsca, surrogate_value, vanilla_sca
from .conic import ConeProgram, ConeSolution, build_block_socp, build_local_socp, solve
from .consensus import (
    AgentState,
    ConsensusSettings,
    ConsensusTrace,
    adapt_rho,
    consensus_update,
    d2sca,
    dual_update,
    local_update,
    partition_data,
)
from .quant import (
    QuantizedVector,
    Quantizer,
    bits_required,
    qd2sca,
    quantize,
    quantize_vector,
    saving_ratio,
)
from .simnet import LinkStats, Message, SimNet, decode, encode

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

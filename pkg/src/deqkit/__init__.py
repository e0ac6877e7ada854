"""Deep-equilibrium training kit.

Forward pass: limited-memory Broyden root finding for z = f(z, x).
Backward pass: four interchangeable gradient strategies (implicit
adjoint iteration, jfb, npg, gdeq) that trade exactness for cost.
"""

__version__ = "0.1.0"

from .backward import (
    GDEQ,
    IMPLICIT,
    JFB,
    NPG,
    STRATEGIES,
    AdjointVector,
    StrategyConfig,
    adjoint_gdeq,
    adjoint_implicit,
    adjoint_jfb,
    adjoint_npg,
    grads_from_adjoint,
    strategy_dispatch,
)
from .cell import (
    CELL_KINDS,
    LINEAR,
    TANH,
    VJP_COUNTER,
    CellParams,
    ParamGrads,
    cell_forward,
    cell_jacobian_state,
    cell_vjp_input,
    cell_vjp_params,
    cell_vjp_state,
    init_cell,
    numeric_grad_oracle,
    spectral_norm_estimate,
    spectral_rescale,
)
from .config import RunConfig, load_checkpoint, save_checkpoint
from .datasets import Dataset, load_dataset_csv, make_two_spirals, save_dataset_csv
from .errors import (
    BatchDivergedError,
    ConfigError,
    DatasetFormatError,
    DivergenceError,
    OracleError,
    ShapeError,
    TrainingAborted,
)
from .linalg import LimitedMemoryInverse, lm_apply, lm_apply_transpose, lm_push
from .solver import (
    BROYDEN,
    PICARD,
    BroydenStep,
    FixedPointSolution,
    SolverConfig,
    broyden_solve,
    broyden_step,
    picard_solve,
    residual,
)
from .training import (
    EpochRow,
    PretrainConfig,
    ProbeRow,
    ReadoutParams,
    RunRecord,
    TrainConfig,
    TrainResult,
    default_probe_strategies,
    evaluate,
    forward_predict,
    gradient_fidelity_probe,
    init_readout,
    pretrain_unrolled,
    softmax_xent,
    train_model,
    train_step,
)

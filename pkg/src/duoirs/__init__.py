"""Double-IRS multi-user MIMO weighted-sum-rate optimization toolkit."""

__version__ = "0.1.0"

from .channel import (
    ChannelSet,
    gen_channel_set,
    gen_sv_channel,
    load_channel_set,
    path_loss_db,
    save_channel_set,
    upa_response,
)
from .config import (
    LOS_28GHZ,
    NLOS_28GHZ,
    PathLossParams,
    ScenarioConfig,
    desk_config,
    load_config,
    paper_config,
)
from .driver import (
    BcdResult,
    OptReport,
    bcd_solve,
    evaluate_projected,
    initialize,
    kkt_residual,
)
from .harness import ResultRow, SweepSpec, emit_summary, run_sweep
from .phase import (
    PhaseQuadratics,
    build_quadratics_irs1,
    build_quadratics_irs2,
    euclidean_grad,
    optimize_phases,
    penalized_objective,
    project_discrete,
    retract,
    riemannian_grad,
    rmo_minimize,
    slackness_gamma,
    vector_transport,
)
from .precoder import DualState, QcqpProblem, build_qcqp, kkt_residuals, solve_qcqp
from .rates import (
    PhaseVector,
    PrecoderSet,
    SurrogateState,
    build_surrogate,
    effective_channel,
    interference_cov,
    mmse_decoder,
    surrogate_value,
    user_rate,
    wsr,
)

"""Conservative vector fields from neural networks: explicit field networks,
gradients of scalar potential networks, and the tools to tell them apart."""

from .activations import Activation
from .autodiff import (
    Graph,
    GraphBuilder,
    GraphError,
    ParamVector,
    evaluate,
    grad_input,
    grad_params,
    input_gradient_graph,
)
from .diagnostics import fd_gradient, jacobian, symmetry_report, symmetry_residual, weight_parallelism
from .networks import (
    MlpParams,
    ParallelPsiNet,
    TiedPsiNet,
    build_parallel_psi,
    explicit_grad,
    explicit_grad_l2,
    explicit_grad_l3,
    init_mlp,
    phi_forward,
    psi_forward,
    tie_weights,
)
from .objectives import dae_loss, neb_loss, sgd_step
from .toy_data import GmmSpec, benchmark_gmm, corrupt, sample_gmm, smoothed_logpdf, smoothed_score
from .training import Checkpoint, TrainConfig, train

__version__ = "0.1.0"

"""State estimation from 1-bit quantized observations.

Bussgang-aided Kalman filtering (full and reduced), dithered 1-bit ADC
simulation, a GRU-based learned-gain filter trained with a from-scratch
optimizer, and the benchmark harness around them.
"""

from .datagen import (
    NoiseSpec,
    SequenceDataset,
    SequencePair,
    chunk_sequences,
    fnv1a64,
    format_mse_db,
    generate_lorenz_dataset,
    load_nclt,
    mse_db,
    read_dataset,
    write_dataset,
)
from .errors import (
    FormatError,
    IngestionError,
    InvalidArgumentError,
    NumericError,
    TrainingError,
)
from .filters import (
    Diagnostics,
    FilterRun,
    FilterState,
    PriorBundle,
    arcsin_covariance,
    bkf_predict,
    bkf_update,
    ekf_step,
    initial_state,
    monte_carlo_sign_covariance,
    rbkf_update,
    run_filter,
    solve_psd,
    symmetrize,
)
from .quantizer import (
    AdcBank,
    ProjectionOperator,
    build_projection,
    dither_threshold,
    quantize_1bit,
    stack_measurements,
)
from .ssmodel import (
    LorenzParams,
    StateSpaceModel,
    WienerVelocityParams,
    jacobian_fd,
    lorenz_jacobian,
    lorenz_model,
    lorenz_step,
    rotate_dynamics,
    rotate_measurement,
    taylor_transition,
    wiener_velocity_model,
)

__version__ = "0.1.0"

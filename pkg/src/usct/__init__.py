"""Frequency-domain ultrasound computed tomography toolkit."""

__version__ = "0.1.0"

from .fields import ComplexField, FourierSymbol, Grid2D, RealField, fourier_symbol, make_grid
from .solver import (
    BornParams,
    BoundarySpec,
    CropDescriptor,
    ScatteringPotential,
    SolveReport,
    SolverError,
    SoundSpeedMap,
    apply_helmholtz,
    build_potential,
    cbs_solve,
    choose_born_params,
    green_apply,
    pad_with_boundary,
)
from .array import (
    MeasurementSet,
    SourcePlan,
    TransducerRing,
    add_noise,
    make_point_source,
    ring_positions,
    sample_at,
    simulate_observation,
    splat,
)
from .phantoms import ContrastStats, PhantomSpec, contrast_stats, gen_phantom
from .metrics import MetricReport, psnr, report, rrmse, ssim
from .fwi import (
    FwiOptions,
    FwiProblem,
    FwiTrace,
    adjoint_source,
    gradient,
    misfit,
    reconstruct,
)
from .container import (
    ContainerError,
    MagicError,
    TruncatedPayloadError,
    UnknownDtypeError,
    read_array,
    read_field,
    write_array,
    write_field,
)
from .config import RunConfig, ConfigError, config_sha256, load_config
from .dataset import gen_dataset, load_manifest
from .reference import analytic_point_field, oracle_rrmse

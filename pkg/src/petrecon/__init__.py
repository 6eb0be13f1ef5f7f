"""2D PET reconstruction toolkit.

Relaxed, preconditioned ordered-subsets solvers for the Poisson emission
model with an edge-preserving relative-difference penalty, plus the
simulation pipeline and figures of merit needed to study their convergence.
"""

__version__ = "0.1.0"

from .errors import (CacheError, ConfigError, DomainError, GeometryError,
                     MetricError, NumericalError, PhantomError, ReconError,
                     ReferenceMissingError, ShapeError, SimulationError,
                     SubsetError, ValidationError)
from .metrics import ROI, AngleTracker, TraceRecorder, build_rois, nrmsd, vector_angle
from .objective import (EIGHT_POINT, FOUR_POINT, ObjectiveSpec, rdp_curvature,
                        rdp_gradient, rdp_value)
from .optimizer import (Callback, RelaxationSchedule, SolverConfig,
                        load_checkpoint, osem_upper_bound, project_interior,
                        run, save_checkpoint)
from .preconditioner import (NesterovAlpha, PrecondConfig, SpatialFactorState,
                             StepScaleState, alpha_rational, base_precond_diag,
                             compute_p, normalize_variant,
                             numerical_gradient_magnitude)
from .projector import (ScannerGeometry, SubsetPartition, SystemMatrix,
                        attenuation_factors, back_project, build_system_matrix,
                        forward_project, geometry_hash, load_system_matrix,
                        partition_subsets, save_system_matrix)
from .simulator import (EmissionData, Phantom, SimulationSpec, blur_psf,
                        export_emission_data, load_emission_data,
                        load_phantom_txt, save_phantom_txt, simulate_data,
                        uniform_disk_phantom, water_attenuation_map)
from .experiments import (AlgorithmConfig, ExperimentConfig, OutputConfig,
                          ReferenceConfig, RunProducts, config_hash,
                          emit_reference, load_config, packaged_config_path,
                          problem_hash, run_experiment, to_desk_scale,
                          write_phantom_file)

__all__ = [name for name in dir() if not name.startswith("_")]

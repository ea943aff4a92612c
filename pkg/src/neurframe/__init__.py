"""Octahedral frame fields represented by a sinusoidal MLP over band-4 SH coefficients."""

__version__ = "0.1.0"

from .sh_frame import (  # noqa: E402
    Q_REF, InvalidFrameError, ProjectionError, align_residual, frame_distance, frame_to_sh,
    project_frames, project_to_frame, qz, shrot,
)
from .mesh import TetMesh, generate_primitive, normalize_to_unit_box, subdivide_multi_boundary_tets  # noqa: E402
from .siren import MlpParams, evaluate, init_params, load_checkpoint, save_checkpoint  # noqa: E402
from .training import TrainConfig, prepare_training_data, train  # noqa: E402

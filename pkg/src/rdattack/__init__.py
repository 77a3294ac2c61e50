"""Random directional adversarial attacks on dense classifiers."""

from ._backend import BACKEND
from .attacks import AttackConfig, AttackOutcome, bim, fgsm, is_success, llclass, mifgsm, perturb_one_step, rda, sign_vec
from .datasets import DataFormatError, Dataset, load_csv, load_idx
from .evalharness import (
    angle_histogram,
    angle_statistics,
    export_report,
    iteration_statistics,
    load_report,
    run_attack_suite,
    select_correctly_classified,
)
from .netcore import (
    ModelFormatError,
    Network,
    ShapeError,
    TrainConfig,
    forward,
    init_network,
    input_gradient,
    load_model,
    loss,
    save_model,
    train,
)
from .rotation import (
    RotationPlan,
    apply_rotation,
    cosine_similarity,
    generate_rotation_set,
    included_angle_deg,
    shuffle_set,
)

__version__ = "0.1.0"

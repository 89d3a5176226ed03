"""Indiscriminate data poisoning for contrastive learning, at desk scale.

Generate bounded poisoning noise against SimCLR / MoCo v2 / BYOL victims
(adversarial or error-minimizing, sample- or class-wise), train victims on
poisoned data, apply defensive augmentations, and score attacks by linear
probing.
"""

__version__ = "0.1.0"

from .datasets import (
    CLASS_WISE,
    SAMPLE_WISE,
    DatasetBundle,
    LabeledImageDataset,
    PerturbationSet,
    PoisonApplication,
    apply_perturbations,
    load_perturbations,
    make_bundle,
    make_synthetic,
    read_poison_file,
    save_perturbations,
    split_dataset,
    write_poison_file,
)
from .defenses import (
    DefenseTransform,
    add_random_noise,
    cutout,
    gaussian_smooth,
    matrix_complete_augment,
    usvt_reconstruct,
)
from .eval_analysis import (
    AttackSpec,
    DefenseSpec,
    ExperimentResult,
    VictimSpec,
    noise_separability,
    render_noise_grid,
    run_cell,
    sweep,
)
from .frameworks import (
    EncoderState,
    FrameworkConfig,
    ViewConfig,
    ema_update,
    generate_views,
    info_nce_loss,
    linear_probe,
    train_encoder,
)
from .poison import (
    AttackSchedule,
    PgdConfig,
    attack_ap_cl,
    attack_emp_cl_class,
    attack_emp_cl_sample,
    noise_gradient,
    pgd_step,
)

"""Knowledge-constrained training and evaluation of context-aware human
activity classifiers.

The package couples a declarative rule engine over context predicates with a
small numpy network core, and offers four classification strategies: a purely
data-driven baseline, training-time knowledge infusion through consistency
penalties on the loss, consistency vectors as extra network inputs, and
post-hoc refinement of the output distribution.
"""

import os as _os

# NESYHAR_THREADS > 1 runs experiment cells in parallel worker processes; pin
# BLAS to one thread then (must happen before numpy loads BLAS) so the workers
# do not oversubscribe the machine.
if int(_os.environ.get("NESYHAR_THREADS", "1")) > 1:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, "1")

from .context import DiscretizationConfig, RawContextRecord, aggregate_context
from .data import (
    Annotation,
    EncodedDataset,
    EncodedSample,
    SensorStream,
    SyntheticConfig,
    UserDataset,
    Window,
    downsample_training,
    encode,
    encode_user_datasets,
    encode_windows,
    generate_synthetic,
    load_dataset,
    map_and_clean_extrasensory,
    segment,
    write_dataset,
)
from .evaluation import (
    ExperimentReport,
    FoldPlan,
    confidence_interval,
    grid_search_alpha,
    macro_f1,
    make_folds,
    run_experiment,
    write_report,
)
from .knowledge import (
    Activity,
    ContextPredicate,
    ContextState,
    ContextVocabulary,
    KnowledgeModel,
    RuleFileError,
    literal_satisfied,
    load_knowledge,
    parse_knowledge,
)
from .losses import (
    LossConfig,
    combined_loss,
    cross_entropy,
    semantic_all,
    semantic_minusprob_one,
    semantic_minusprob_prob,
    semantic_zero_one,
    semantic_zero_prob,
)
from .nn import (
    AdamState,
    BranchSpec,
    NetworkSpec,
    adam_step,
    backward,
    build_network,
    forward,
    run_gradient_check_suite,
)
from .strategies import (
    StrategyConfig,
    TrainConfig,
    TrainedModel,
    load_model,
    predict,
    predict_many,
    refine,
    save_model,
    train,
)

__version__ = "0.1.0"

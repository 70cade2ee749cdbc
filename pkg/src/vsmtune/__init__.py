"""vsmtune: align a text respondent with target VSM13 cultural-dimension
scores by evolving soft-prompt embedding matrices with Differential
Evolution."""

from .de import (
    DEConfig,
    FitnessEvaluationFailed,
    GenerationRecord,
    Population,
    Selection,
    crossover,
    evolve,
    init_population,
    mutate,
    select,
)
from .harness import (
    AblationGrid,
    BackendError,
    EvaluationReport,
    ExperimentConfig,
    evaluate_candidate,
    load_experiment_config,
    run_ablation,
    run_de_experiment,
    run_icl_baseline,
    run_naive_baseline,
)
from .respondents import (
    DimMismatch,
    InstructionPrompt,
    RemoteEndpointConfig,
    RemoteRespondent,
    RespondentBackend,
    SyntheticRespondent,
    SyntheticRespondentConfig,
    TransportError,
    UnknownCountry,
    UnparseableAnswer,
    build_icl_prompt,
    build_instruction,
    parse_numeric_answer,
)
from .softprompt import FormatError, ShapeMismatch, SoftPrompt
from .survey import (
    CulturalDimensions,
    DimensionConstants,
    MissingQuestion,
    OutOfScale,
    ResponseSet,
    SurveyDataset,
    SurveyQuestion,
    aggregate_responses,
    compute_dimensions,
    example_config_path,
    l1_fitness,
    load_dataset,
    load_placeholder_dataset,
)

__version__ = "0.1.0"

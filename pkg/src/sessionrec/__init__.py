"""Session-based implicit ratings, gray-sheep user coefficients and user K-NN."""

from .characterize import (
    PlayMatrix, SongCoefficients, UserProfile, build_play_matrix, characterize,
    compute_listening_coefficients, compute_upc, discretize_upc,
)
from .evaluation import (
    ExperimentReport, FoldPlan, MetricSet, RatingVariant, evaluate_fold, kfold_split, run_experiment,
)
from .knn import (
    Prediction, SimilarityConfig, UserKNN, cosine_similarity, find_neighbors, pearson_similarity,
    predict_rating, weighted_similarity_upc,
)
from .mf import MFHyper, MFModel, mf_predict, mf_train
from .playlog import Corpus, PlayEvent, parse_playlog, synthesize_playlog
from .ratings import (
    FrequencyTable, RatingMatrix, compute_frequency, compute_playcount_ratings, compute_ratings,
)
from .sessions import Session, SessionCounts, count_session_positions, sessionize

__version__ = "0.1.0"

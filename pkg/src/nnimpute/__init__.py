"""Nearest-neighbour imputation estimators for survey samples with replication variance."""

from .estimators import MeanOfG, ProportionBelow, Quantile, nni_mean_estimate, nni_quantile_estimate
from .matching import MatchingVariable, fit_matching_model, match_dataset, nearest_neighbor_match
from .survey import SurveyDataset, draw_sample, hajek_estimate, ht_estimate

__version__ = "0.1.0"

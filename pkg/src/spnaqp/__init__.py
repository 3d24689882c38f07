"""Approximate aggregate query answering over a learned sum-product model."""

from .bench import (
    MetricsReport,
    SyntheticParams,
    gen_synthetic,
    metric_avg_rel_error,
    metric_bin_missing,
    metric_skewness,
    resample_scale,
    run_workload,
    synthetic_workload,
)
from .conditions import Condition, ConditionSet, DiscreteSet, Interval, IntervalUnion
from .engine import StopRule, StrategyUnsupported, exec_probability, exec_sample, resolve_strategy
from .exact import exact_query, online_sample_query
from .infer import ZeroProbability, expectation, group_values, probability
from .learn import LearnParams, learn, learn_independence_baseline
from .plan import choose_strategy, compile_filter, validate_query
from .queries import AggregateResult, QuerySpec, SqlError, UnsupportedFeature, parse
from .sample import allocate_stratified, multipliers, sample_conditioned, sample_random
from .spn import InvalidModel, Spn, deserialize, load_model, marginalize, save_model, serialize
from .table import ColumnMeta, DataError, Table, load_csv, load_table, parse_schema, save_table

__version__ = "0.1.0"

__all__ = [
    "AggregateResult",
    "ColumnMeta",
    "Condition",
    "ConditionSet",
    "DataError",
    "DiscreteSet",
    "Interval",
    "IntervalUnion",
    "InvalidModel",
    "LearnParams",
    "MetricsReport",
    "QuerySpec",
    "Spn",
    "SqlError",
    "StopRule",
    "StrategyUnsupported",
    "SyntheticParams",
    "UnsupportedFeature",
    "ZeroProbability",
    "allocate_stratified",
    "choose_strategy",
    "compile_filter",
    "deserialize",
    "exact_query",
    "exec_probability",
    "exec_sample",
    "expectation",
    "gen_synthetic",
    "group_values",
    "learn",
    "learn_independence_baseline",
    "load_csv",
    "load_model",
    "load_table",
    "marginalize",
    "metric_avg_rel_error",
    "metric_bin_missing",
    "metric_skewness",
    "multipliers",
    "online_sample_query",
    "parse",
    "parse_schema",
    "probability",
    "resample_scale",
    "resolve_strategy",
    "run_workload",
    "sample_conditioned",
    "sample_random",
    "save_model",
    "save_table",
    "serialize",
    "synthetic_workload",
    "validate_query",
    "__version__",
]

"""Hybrid ASD pre-screening: categorical-score and image classifiers with
late fusion of their per-subject probabilities."""

from . import datamodel, evalreport, fusion, ingest, neural, tabular
from .datamodel import (
    AdosRecord,
    Dataset,
    Label,
    ModuleId,
    Provenance,
    SplitPair,
    encode_record,
    recode_score,
    split_dataset,
)
from .evalreport import ConfusionMatrix, MetricTriple, RunReport, confusion, metrics
from .fusion import (
    FusedDecision,
    FusionWeights,
    PredictionScore,
    aggregate_metrics,
    fuse,
    run_hybrid,
    weights_by_asd_count,
    weights_by_train_count,
    weights_simple,
)
from .ingest import (
    CsvSchema,
    SynthesisConfig,
    decode_image,
    encode_image,
    parse_ados_csv,
    synth_images,
    synth_tabular,
)
from .neural import DenseNetClassifier, train_net
from .tabular import (
    LogisticRegressionGD,
    PegasosSVM,
    SweepResult,
    calibrate,
    lr_sweep,
    train_linear_svm,
    train_logreg,
)

__version__ = "0.1.0"

"""Ponzi scheme contract detection from temporal transaction graphs and opcode sequences."""
from .dataio import generate_recipe, load_dataset, write_synthetic
from .errors import ConfigError, DataError, DSPSDError, NodeNotFoundError, ShapeError
from .evalviz import cross_validate, kfold_split, prf, project_2d, tfidf_opcode_importance
from .pipeline import ModelBundle, TrainConfig, detect, fit, train_classifier, train_embeddings
from .txgraph import Account, AccountKind, TemporalGraph, TransactionEvent, build_graph

__version__ = "0.1.0"

__all__ = [
    "Account", "AccountKind", "ConfigError", "DSPSDError", "DataError", "ModelBundle", "NodeNotFoundError",
    "ShapeError", "TemporalGraph", "TrainConfig", "TransactionEvent", "build_graph", "cross_validate", "detect",
    "fit", "generate_recipe", "kfold_split", "load_dataset", "prf", "project_2d", "tfidf_opcode_importance",
    "train_classifier", "train_embeddings", "write_synthetic",
]

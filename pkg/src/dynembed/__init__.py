"""Consensus embeddings of attributed networks, kept fresh by first-order
eigen-pair perturbation as the network and its attributes drift."""

from .consensus import ConsensusProjection, fuse
from .graph import (
    Delta,
    LaplacianPair,
    SimilarityGraph,
    Snapshot,
    apply_delta,
    build_laplacian,
    build_similarity,
    delta_laplacian,
)
from .perturb import PerturbReport, RefreshRequired, delta_eigenvalue, delta_eigenvector, update_state
from .pipeline import EmbeddingRun, RunConfig, init_offline, load_checkpoint, save_checkpoint, step_online
from .spectral import SpectralState, embedding_matrix, reorthonormalize, solve_topk

__version__ = "0.1.0"

"""Deep embedded clustering of attributed networks with dual autoencoders and
a cluster-distribution consistency constraint, plus an LFR attributed-network
generator, clustering metrics, and an experiment harness."""

from .errors import (CheckpointError, DualdecError, GenerationError,
                     ParameterError, ParseError, ShapeError, TrainingError)
from .graph import (AttributedNetwork, build_knn_graph, knn_neighbors,
                    load_network, normalize_adjacency, save_network)
from .lfr import LfrSpec, external_fraction, generate
from .linalg import Adam, LinearLayer, glorot_init, linear_backward, linear_forward, spmm
from .metrics import ContingencyTable, accuracy, ari, evaluate_all, f1, nmi
from .model import (AeConfig, GaeConfig, LossWeights, ModelState, TrainConfig,
                    ae_forward, ae_recon_loss, gae_recon_loss, gcn_forward,
                    init_model, inner_product_decode, kl_divergence,
                    load_checkpoint, loss_and_grads, save_checkpoint,
                    soft_assignment, target_distribution, total_loss)
from .training import extract_outputs, hard_assign, kmeans, kmeans_full, pretrain, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

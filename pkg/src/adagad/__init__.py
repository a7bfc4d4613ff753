"""Two-stage unsupervised node anomaly detection on attributed graphs.

Stage 1 pretrains one masked graph autoencoder per augmentation level (node,
edge, subgraph) on augmented graphs whose anomaly magnitude is lowered by
rejection sampling. Stage 2 freezes the encoders, aggregates their
embeddings and retrains fresh decoders on the original graph with a
neighborhood anomaly-distribution regularizer; reconstruction errors are
the anomaly scores.
"""

__version__ = "0.1.0"

from .graph import Graph, load_graph, write_graph  # noqa: E402

__all__ = ["Graph", "load_graph", "write_graph", "__version__"]

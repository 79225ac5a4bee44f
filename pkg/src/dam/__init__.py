"""Few-shot classification by meta-generating a deep attentive metric.

A four-block convolutional embedding feeds a task encoder that summarizes
cross-class sample pairs into per-class latent Gaussians; sampled latents are
decoded into the weights of a small attentive similarity network that scores
query images against support images episode by episode.
"""

from . import checkpoint, data, diffcore, embedding, evalcli, metagen, metricnet, trainer

__version__ = "1.0.0"

__all__ = [
    "checkpoint",
    "data",
    "diffcore",
    "embedding",
    "evalcli",
    "metagen",
    "metricnet",
    "trainer",
    "__version__",
]

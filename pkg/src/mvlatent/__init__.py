"""Multi-view private/shared subspace learning over precomputed audio latents."""
from .core import EmbeddingMatrix, LatentBundle, MVLatentError, ViewPair, validate_embedding

__version__ = "0.1.0"

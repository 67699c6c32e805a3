"""Style/content separation networks with a self-contained autodiff engine."""

from stylemix.autodiff import ChannelStats, Graph, Tensor, backward

__version__ = "0.1.0"

__all__ = ["ChannelStats", "Graph", "Tensor", "backward", "__version__"]

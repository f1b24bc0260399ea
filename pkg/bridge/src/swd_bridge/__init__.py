"""Model bridge: serves per-step masked-LM logits over the wire protocol."""

from .models import StubModel, load_model
from .server import BridgeConfig, serve

__version__ = "0.1.0"

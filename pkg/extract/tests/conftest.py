import os
import socket
from pathlib import Path

DATA = Path(__file__).parent / "data"
WORD_VECTORS = DATA / "tiny_word_vectors.vec"


def hub_reachable(timeout: float = 3.0) -> bool:
    try:
        socket.create_connection(("huggingface.co", 443), timeout=timeout).close()
        return True
    except OSError:
        return False


def model_cached(model_id: str) -> bool:
    base = Path(
        os.environ.get("HF_HOME", Path.home() / ".cache" / "huggingface")
    ) / "hub"
    return (base / f"models--{model_id.replace('/', '--')}").exists()


def encoder_assets_available(model_id: str) -> bool:
    """Cheap probe so offline environments skip instead of stalling on
    hub retries."""
    return model_cached(model_id) or hub_reachable()

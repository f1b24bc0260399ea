"""Model backends for the bridge.

A backend exposes ``vocab_size``, ``max_length``, and
``logits(tokens, mask_positions) -> list[list[float]]`` where ``tokens``
uses None for masked slots. The stub backend is fully deterministic and
needs no weights; the HF backend wraps any Hugging Face masked LM when
transformers is installed.
"""

from __future__ import annotations


class StubModel:
    """Deterministic stand-in whose logits encode the queried position.

    Row for position p is ``p`` everywhere except ``p + 1`` at vocabulary
    entry ``p mod K``, so the argmax is the position's phase and the row
    minimum recovers p. Conformance tests use this to prove replies stay
    aligned with ``mask_positions``.
    """

    def __init__(self, vocab_size: int, max_length: int = 4096):
        if vocab_size < 2:
            raise ValueError("stub vocab_size must be >= 2")
        self.vocab_size = vocab_size
        self.max_length = max_length

    def logits(self, tokens, mask_positions):
        rows = []
        for pos in mask_positions:
            row = [float(pos)] * self.vocab_size
            row[pos % self.vocab_size] = float(pos) + 1.0
            rows.append(row)
        return rows


class HFMaskedLM:
    """Hugging Face fill-mask model behind the denoiser contract.

    Masked slots map to the tokenizer's mask token and one forward pass
    serves each request. Engine token ids are the model's own vocabulary
    ids; treating a bidirectional MLM as the denoiser is an
    approximation, so the model choice stays entirely with the caller.
    """

    def __init__(self, model_id: str, device: str = "cpu",
                 mask_token_id: int | None = None, max_length: int | None = None):
        try:
            import torch
            from transformers import AutoModelForMaskedLM, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "transformers/torch are required for hf: models; "
                "install the bridge with the [hf] extra"
            ) from exc

        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModelForMaskedLM.from_pretrained(model_id).to(device).eval()
        self.device = device
        self.mask_token_id = (
            mask_token_id if mask_token_id is not None else self.tokenizer.mask_token_id
        )
        if self.mask_token_id is None:
            raise RuntimeError(f"{model_id} has no mask token")
        self.vocab_size = int(self.model.config.vocab_size)
        self.max_length = max_length or int(
            getattr(self.model.config, "max_position_embeddings", 512)
        )

    def logits(self, tokens, mask_positions):
        ids = [self.mask_token_id if t is None else int(t) for t in tokens]
        batch = self._torch.tensor([ids], dtype=self._torch.long, device=self.device)
        with self._torch.no_grad():
            out = self.model(input_ids=batch).logits[0]
        return [[float(v) for v in out[pos].tolist()] for pos in mask_positions]


def load_model(spec: str, device: str = "cpu", mask_token_id: int | None = None,
               max_length: int | None = None):
    """``stub:K`` builds the deterministic stub; ``hf:<id>`` loads a masked LM."""
    kind, _, rest = spec.partition(":")
    if kind == "stub":
        if not rest.isdigit():
            raise ValueError(f"stub spec needs a vocab size, got {spec!r}")
        return StubModel(int(rest), max_length=max_length or 4096)
    if kind == "hf":
        if not rest:
            raise ValueError("hf spec needs a model id, e.g. hf:bert-base-uncased")
        return HFMaskedLM(rest, device=device, mask_token_id=mask_token_id,
                          max_length=max_length)
    raise ValueError(f"unknown model spec {spec!r} (expected stub:K or hf:<id>)")

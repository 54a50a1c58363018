"""Causal transformer text tower producing the normalized text embedding."""

from __future__ import annotations

import numpy as np

from .attention import block_weights_from_bundle, transformer_block
from .bundle import WeightsBundle
from .tensor_ops import l2_normalize, layer_norm
from .tokenizer import BpeTokenizer, TokenSequence

PROMPT_TEMPLATE = "A photo of a {phrase}."


def encode_text(tokens: TokenSequence, bundle: WeightsBundle) -> np.ndarray:
    """Embed a padded token sequence; feature taken at the end-of-text slot,
    passed through the final norm and text projection, then L2-normalized."""
    ids = np.asarray(tokens.ids, dtype=np.int64)
    x = bundle.tensor("text.token_embedding")[ids]
    x = x + bundle.tensor("text.positional_embedding")[: len(ids)]
    n = len(ids)
    causal = np.tril(np.ones((n, n), dtype=bool))
    heads = bundle.dims["text_heads"]
    for layer in range(bundle.dims["text_layers"]):
        bw = block_weights_from_bundle(bundle, "text", layer, heads)
        x = transformer_block(x, bw, mask=causal)
    x = layer_norm(x, bundle.tensor("text.ln_final.weight"), bundle.tensor("text.ln_final.bias"))
    feat = x[tokens.eot_index] @ bundle.tensor("text.projection")
    return l2_normalize(feat)


def encode_phrase(
    phrase: str, bundle: WeightsBundle, use_template: bool = False
) -> np.ndarray:
    """Tokenize and embed a raw phrase (optionally prompt-templated)."""
    text = PROMPT_TEMPLATE.format(phrase=phrase) if use_template else phrase
    tokenizer = BpeTokenizer(bundle.tokenizer)
    return encode_text(tokenizer.tokenize(text), bundle)

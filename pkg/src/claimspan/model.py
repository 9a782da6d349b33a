"""Full tagger assembly: vocabulary, parameter bundle, per-sequence loss, and
JSON checkpoint serialization.

The encoder, adapter, and CRF modules each own their math; this module wires
them into one differentiable loss per sequence and handles everything a saved
model needs to be reloaded and run (config, vocab, bank texts, tensors).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, fields

import numpy as np

from . import crf as crf_mod
from .crf import CrfParams, emissions_backward, emissions_from, init_crf_params, nll_backward, nll_loss
from .descnet import (
    DescNetParams,
    DescriptionBank,
    descnet_backward,
    descnet_forward,
    encode_description_bank,
    init_descnet_params,
)
from .encoder import EncoderParams, ModelConfig, encode_backward, encode_forward, init_encoder_params
from .numerics import named_arrays, zeros_like_struct
from .preprocess import AnnotatedPost, CharSpan, OffsetMap, Token, decode_bio, encode_bio, normalize_post, tokenize

CHECKPOINT_VERSION = 1
UNK = "<unk>"


class CheckpointError(ValueError):
    """A checkpoint document is malformed or inconsistent."""


@dataclass
class Vocabulary:
    """Lowercased word-level vocabulary; index 0 is the unknown token."""

    words: list[str]
    index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.words or self.words[0] != UNK:
            raise ValueError("vocabulary must start with the unknown token")
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def lookup(self, surface: str) -> int:
        return self.index.get(surface.lower(), 0)

    @classmethod
    def build(cls, token_lists: list[list[str]], max_size: int) -> "Vocabulary":
        """Most frequent lowercased surfaces, ties broken lexicographically."""
        counts = Counter(s.lower() for toks in token_lists for s in toks)
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([UNK] + [w for w, _ in ranked[: max_size - 1]])


@dataclass
class ModelParams:
    encoder: EncoderParams
    crf: CrfParams
    descnet: DescNetParams | None = None


def init_model_params(config: ModelConfig, vocab_size: int, bank_size: int,
                      rng: np.random.Generator) -> ModelParams:
    """Draw all weights in canonical order so a seed pins every tensor.

    Encoder and CRF are drawn before the adapter, so ablation variants that
    share a seed also share their backbone initialization.
    """
    enc = init_encoder_params(rng, config, vocab_size)
    head = init_crf_params(rng, config.d)
    desc = init_descnet_params(rng, config, bank_size) if config.use_descnet else None
    return ModelParams(encoder=enc, crf=head, descnet=desc)


def zero_grads(params: ModelParams) -> ModelParams:
    return zeros_like_struct(params)


@dataclass
class Example:
    """A post converted to model inputs, with the bookkeeping to map
    predictions back onto the raw text."""

    post_id: str
    tokens: list[Token]
    token_ids: list[int]
    gold_tags: list[str]
    offset_map: OffsetMap
    raw_text: str
    dropped_spans: int = 0


def post_to_example(post: AnnotatedPost, vocab: Vocabulary, config: ModelConfig) -> Example:
    """Normalize, tokenize, truncate to the model's max length, BIO-encode."""
    norm, omap, dropped = normalize_post(post)
    tokens = tokenize(norm.text)[: config.max_len]
    tags = encode_bio(tokens, norm.spans)
    ids = [vocab.lookup(t.surface) for t in tokens]
    return Example(post.id, tokens, ids, tags, omap, post.text, dropped)


def spans_to_raw(example: Example, tags: list[str]) -> list[CharSpan]:
    """Decode predicted tags to spans in the post's original raw text."""
    spans, _repairs = decode_bio(example.tokens, tags)
    out = []
    for sp in spans:
        raw_start = example.offset_map.norm_to_raw[sp.start]
        raw_end = example.offset_map.norm_to_raw[sp.end - 1] + 1
        out.append(CharSpan(raw_start, raw_end))
    return out


def build_bank(texts: list[str], vocab: Vocabulary, params: ModelParams,
               config: ModelConfig) -> DescriptionBank:
    """Tokenize description texts and encode them with the current weights."""
    if params.descnet is None:
        raise ValueError("model has no adapter; no bank to encode")
    id_lists = []
    for text in texts:
        toks = tokenize(text)
        if len(toks) > config.max_len:
            raise ValueError(f"description longer than max_len: {text!r}")
        id_lists.append([vocab.lookup(t.surface) for t in toks])
    return encode_description_bank(texts, id_lists, params.encoder,
                                   params.descnet.description_encoder, config)


def sequence_forward(params: ModelParams, config: ModelConfig, token_ids: list[int],
                     bank: DescriptionBank | None, rng=None, train=False):
    """Encoder + optional adapter + emission projection; returns (emissions, cache)."""
    adapter = None
    if config.use_descnet and params.descnet is not None:
        if bank is None:
            raise ValueError("adapter enabled but no description bank supplied")

        def adapter(z):
            return descnet_forward(z, bank, params.descnet, config, rng, train)

    z, enc_cache = encode_forward(token_ids, params.encoder, config, rng, train, adapter)
    e = emissions_from(z, params.crf)
    return e, {"enc": enc_cache, "z": z, "bank": bank}


def sequence_loss(params: ModelParams, config: ModelConfig, token_ids: list[int],
                  gold_tags: list[str], bank: DescriptionBank | None,
                  rng=None, train=False):
    e, cache = sequence_forward(params, config, token_ids, bank, rng, train)
    return nll_loss(e, params.crf, gold_tags), (e, cache)


def sequence_backward(params: ModelParams, config: ModelConfig, gold_tags: list[str],
                      e: np.ndarray, cache, grads: ModelParams,
                      through_bank: bool = True) -> None:
    """Accumulate d(nll)/d(params) for one sequence into ``grads``."""
    d_e = nll_backward(e, params.crf, gold_tags, grads.crf)
    d_z = emissions_backward(d_e, cache["z"], params.crf, grads.crf)

    adapter_backward = None
    if config.use_descnet and params.descnet is not None:

        def adapter_backward(d_out, adapter_cache):
            return descnet_backward(d_out, adapter_cache, cache["bank"], params.descnet,
                                    config, grads.descnet, grads.encoder, through_bank)

    encode_backward(d_z, cache["enc"], params.encoder, config, grads.encoder, adapter_backward)


def predict_tags(params: ModelParams, config: ModelConfig, token_ids: list[int],
                 bank: DescriptionBank | None) -> list[str]:
    e, _ = sequence_forward(params, config, token_ids, bank, rng=None, train=False)
    return crf_mod.viterbi_decode(e, params.crf)


# ---------------------------------------------------------------------------
# Checkpoint serialization

def _config_to_dict(config: ModelConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


def save_checkpoint(path, config: ModelConfig, vocab: Vocabulary,
                    bank_texts: list[str] | None, params: ModelParams) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": _config_to_dict(config),
        "vocab": vocab.words,
        "bank_texts": bank_texts,
        "params": {
            name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
            for name, arr in named_arrays(params)
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (config, vocab, bank_texts, params); validates names and shapes."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    try:
        config = ModelConfig(**doc["config"])
        vocab = Vocabulary(list(doc["vocab"]))
        bank_texts = doc["bank_texts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    bank_size = len(bank_texts) if bank_texts else 1
    params = init_model_params(config, len(vocab), bank_size, np.random.default_rng(0))
    stored = doc["params"]
    seen = set()
    for name, arr in named_arrays(params):
        if name not in stored:
            raise CheckpointError(f"checkpoint missing tensor {name!r}")
        entry = stored[name]
        values = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if values.shape != arr.shape:
            raise CheckpointError(f"tensor {name!r} has shape {values.shape}, expected {arr.shape}")
        arr[...] = values
        seen.add(name)
    extra = set(stored) - seen
    if extra:
        raise CheckpointError(f"checkpoint holds unknown tensors: {sorted(extra)}")
    return config, vocab, bank_texts, params

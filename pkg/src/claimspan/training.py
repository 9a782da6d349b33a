"""Training loop, Adam optimizer, config-file parsing, gradient checker, and
the adapter-placement sweep.

Everything is driven by one seeded generator so a (seed, config, data) triple
reproduces the run bitwise: init, shuffling, and dropout all draw from it in a
fixed order.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .crf import forbidden_masks, pin_forbidden
from .descnet import DescriptionBank  # noqa: F401  (re-exported for callers)
from .encoder import ATTENTION_VARIANTS, ModelConfig
from .metrics import inspan_indices, mean_dice, overall_prf
from .model import (
    Example,
    ModelParams,
    Vocabulary,
    build_bank,
    init_model_params,
    post_to_example,
    predict_tags,
    sequence_backward,
    sequence_loss,
    zero_grads,
)
from .numerics import copy_struct, named_arrays
from .preprocess import AnnotatedPost, normalize_post, tokenize


class ConfigError(ValueError):
    """A config file or config value is invalid."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries where it happened."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    adapter_layer: int = 4
    use_descnet: bool = True
    attention_variant: str = "coda"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("batch_size", "max_epochs", "patience", "adapter_layer"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience > self.max_epochs:
            raise ConfigError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ConfigError(f"attention_variant must be one of {ATTENTION_VARIANTS}")


# ---------------------------------------------------------------------------
# key=value config files

def _coerce(name: str, raw: str, typ):
    if typ is bool:
        low = raw.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"{name}: expected true/false, got {raw!r}")
        return low == "true"
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config_text(text: str) -> dict[str, str]:
    """Lines of ``key = value``; '#' comments and blank lines ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def configs_from_mapping(kv: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    """Build both configs from one flat namespace; shared keys feed both."""
    model_fields = {f.name: f.type for f in fields(ModelConfig)}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    types = {"int": int, "float": float, "bool": bool, "str": str}
    model_kwargs, train_kwargs = {}, {}
    for key, raw in kv.items():
        hit = False
        if key in model_fields:
            model_kwargs[key] = _coerce(key, raw, types[model_fields[key]])
            hit = True
        if key in train_fields:
            train_kwargs[key] = _coerce(key, raw, types[train_fields[key]])
            hit = True
        if not hit:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    with open(path, encoding="utf-8") as fh:
        return configs_from_mapping(parse_config_text(fh.read()))


def effective_model_config(mc: ModelConfig, tc: TrainConfig) -> ModelConfig:
    """TrainConfig owns the run-level knobs it duplicates."""
    return replace(mc, adapter_layer=tc.adapter_layer, use_descnet=tc.use_descnet,
                   attention_variant=tc.attention_variant, seed=tc.seed)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def crf_freeze_masks() -> dict[str, np.ndarray]:
    """Boolean masks (True = frozen) for the pinned CRF entries."""
    trans_mask, start_mask = forbidden_masks()
    return {"crf.transitions": trans_mask, "crf.start_scores": start_mask}


def adam_step(params, grads, state: AdamState, lr: float,
              freeze: dict[str, np.ndarray] | None = None) -> None:
    """Bias-corrected Adam update, in place, in canonical parameter order.

    ``freeze`` maps parameter names to boolean masks whose True entries are
    left untouched (used for the pinned CRF transitions).
    """
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for (name, p), (gname, g) in zip(named_arrays(params), named_arrays(grads)):
        assert name == gname
        if freeze and name in freeze:
            g = np.where(freeze[name], 0.0, g)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        if freeze and name in freeze:
            update = np.where(freeze[name], 0.0, update)
        p -= update


# ---------------------------------------------------------------------------
# Training

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1: float
    val_dsc: float
    elapsed_s: float

    def to_json(self) -> str:
        # The log file must be byte-identical across reruns of the same
        # (seed, config, data); wall-clock timing stays on the in-memory
        # record only.
        return json.dumps({"epoch": self.epoch, "train_loss": self.train_loss,
                           "val_f1": self.val_f1, "val_dsc": self.val_dsc})


@dataclass
class TrainResult:
    params: ModelParams
    vocab: Vocabulary
    model_config: ModelConfig
    bank_texts: list[str] | None
    records: list[EpochRecord]
    best_epoch: int
    best_val_dsc: float
    stopped_early: bool


def _token_surfaces(post: AnnotatedPost, max_len: int) -> list[str]:
    norm, _omap, _dropped = normalize_post(post)
    return [t.surface for t in tokenize(norm.text)[:max_len]]


def prepare_examples(corpus: list[AnnotatedPost], vocab: Vocabulary,
                     config: ModelConfig) -> list[Example]:
    """Posts as model inputs; posts with no surviving tokens are dropped."""
    out = []
    for post in corpus:
        ex = post_to_example(post, vocab, config)
        if ex.token_ids:
            out.append(ex)
    return out


def _scale_grads(grads, factor: float) -> None:
    for _name, arr in named_arrays(grads):
        arr *= factor


def evaluate_split(params: ModelParams, config: ModelConfig, examples: list[Example],
                   bank: DescriptionBank | None) -> tuple[float, float, float, float]:
    """Returns (precision, recall, f1, dice) over in-span token sets."""
    golds, preds = [], []
    for ex in examples:
        tags = predict_tags(params, config, ex.token_ids, bank)
        golds.append(inspan_indices(ex.gold_tags))
        preds.append(inspan_indices(tags))
    scores = overall_prf(preds, golds)
    return scores.p, scores.r, scores.f1, mean_dice(preds, golds)


def train(corpus_train: list[AnnotatedPost], corpus_val: list[AnnotatedPost],
          bank_texts: list[str] | None, model_config: ModelConfig,
          train_config: TrainConfig, log_path=None) -> TrainResult:
    """Adam training with early stopping on validation dice.

    Keeps the parameters from the epoch with the best validation dice; stops
    once that score has failed to improve for ``patience`` consecutive epochs.
    """
    if not corpus_train or not corpus_val:
        raise ValueError("training and validation corpora must be non-empty")
    mc = effective_model_config(model_config, train_config)
    tc = train_config
    if mc.use_descnet and not bank_texts:
        raise ValueError("adapter enabled but no description bank given")

    rng = np.random.default_rng(tc.seed)
    surfaces = [_token_surfaces(p, mc.max_len) for p in corpus_train]
    vocab = Vocabulary.build(surfaces, mc.vocab_size)
    train_ex = prepare_examples(corpus_train, vocab, mc)
    val_ex = prepare_examples(corpus_val, vocab, mc)
    if not train_ex or not val_ex:
        raise ValueError("no usable examples after preprocessing")

    params = init_model_params(mc, len(vocab), len(bank_texts) if bank_texts else 1, rng)
    state = AdamState()
    freeze = crf_freeze_masks()

    records: list[EpochRecord] = []
    best_params = copy_struct(params)
    best_dsc = -math.inf
    best_epoch = 0
    bad_epochs = 0
    stopped_early = False
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, tc.max_epochs + 1):
            tic = time.perf_counter()
            bank = build_bank(bank_texts, vocab, params, mc) if mc.use_descnet else None
            order = rng.permutation(len(train_ex))
            losses = []
            for lo in range(0, len(order), tc.batch_size):
                batch = [train_ex[i] for i in order[lo:lo + tc.batch_size]]
                grads = zero_grads(params)
                for ex in batch:
                    loss, (e, cache) = sequence_loss(params, mc, ex.token_ids,
                                                     ex.gold_tags, bank, rng, train=True)
                    if not math.isfinite(loss):
                        raise TrainingDiverged(
                            f"non-finite loss {loss} at epoch {epoch}, post {ex.post_id}")
                    losses.append(loss)
                    sequence_backward(params, mc, ex.gold_tags, e, cache, grads)
                _scale_grads(grads, 1.0 / len(batch))
                adam_step(params, grads, state, tc.learning_rate, freeze)

            val_bank = build_bank(bank_texts, vocab, params, mc) if mc.use_descnet else None
            _p, _r, val_f1, val_dsc = evaluate_split(params, mc, val_ex, val_bank)
            rec = EpochRecord(epoch, float(np.mean(losses)), val_f1, val_dsc,
                              time.perf_counter() - tic)
            records.append(rec)
            if log_fh:
                log_fh.write(rec.to_json() + "\n")
                log_fh.flush()

            if val_dsc > best_dsc:
                best_dsc = val_dsc
                best_epoch = epoch
                best_params = copy_struct(params)
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= tc.patience:
                    stopped_early = True
                    break
    finally:
        if log_fh:
            log_fh.close()

    return TrainResult(best_params, vocab, mc, list(bank_texts) if bank_texts else None,
                       records, best_epoch, best_dsc, stopped_early)


# ---------------------------------------------------------------------------
# Gradient checker

@dataclass
class GradCheckReport:
    max_rel_err: float
    parameter: str
    tolerance: float
    per_tensor: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


_CHECK_BANK = ["claims with numbers or statistics", "negation of a false claim"]


def grad_check(model_config: ModelConfig | None = None,
               train_config: TrainConfig | None = None,
               tolerance: float = 1e-4,
               sabotage: str | None = None) -> GradCheckReport:
    """Compare analytic gradients of the full sequence loss against central
    finite differences on a small instance.

    ``sabotage`` names a tensor whose analytic gradient gets perturbed before
    the comparison; it exists so tests can confirm the checker catches a
    broken gradient.
    """
    tc = train_config or TrainConfig(adapter_layer=2)
    mc = model_config or ModelConfig(d=8, h=2, d_ff=16, layers=2, max_len=16,
                                     vocab_size=64, dropout_p=0.0, adapter_layer=2,
                                     seed=tc.seed)
    mc = effective_model_config(mc, replace(tc, adapter_layer=min(tc.adapter_layer, mc.layers)))
    rng = np.random.default_rng(mc.seed)

    words = [f"w{i}" for i in range(30)] + ["claims", "numbers", "statistics",
                                            "negation", "false", "claim", "with", "or", "of", "a"]
    vocab = Vocabulary.build([words], mc.vocab_size)
    token_ids = [int(i) for i in rng.integers(1, len(vocab), size=5)]
    gold_tags = ["O", "B", "I", "I", "O"]
    bank_texts = _CHECK_BANK[:2] if mc.use_descnet else None

    params = init_model_params(mc, len(vocab), len(bank_texts) if bank_texts else 1, rng)
    # The production 0.02-std init leaves deep-tensor gradients near the
    # finite-difference noise floor; redraw the probe instance at O(1) scale
    # so every backward formula faces gradients it cannot hide behind.
    for name, arr in named_arrays(params):
        if name.endswith("ln1_gain") or name.endswith("ln2_gain"):
            arr[...] = 1.0 + 0.2 * rng.normal(size=arr.shape)
        else:
            arr[...] = 0.5 * rng.normal(size=arr.shape)
    pin_forbidden(params.crf)

    def loss_at(p: ModelParams) -> float:
        bank = build_bank(bank_texts, vocab, p, mc) if mc.use_descnet else None
        return sequence_loss(p, mc, token_ids, gold_tags, bank, rng=None, train=False)[0]

    grads = zero_grads(params)
    bank = build_bank(bank_texts, vocab, params, mc) if mc.use_descnet else None
    _loss, (e, cache) = sequence_loss(params, mc, token_ids, gold_tags, bank,
                                      rng=None, train=False)
    sequence_backward(params, mc, gold_tags, e, cache, grads)
    if sabotage is not None:
        target = dict(named_arrays(grads))[sabotage]
        target.flat[0] += 1.0

    step = 1e-5
    # Softmax attention is invariant to key biases (a uniform logit shift per
    # row), so d/d(b_k) is exactly zero and only finite-difference noise
    # remains there; the floor keeps that degenerate direction from being
    # compared at noise scale. Every live tensor here has gradient norm well
    # above it.
    floor = 1e-4
    per_tensor: dict[str, float] = {}
    worst = (0.0, "")
    grad_map = dict(named_arrays(grads))
    for name, arr in named_arrays(params):
        analytic = grad_map[name]
        fd = np.zeros_like(arr)
        flat = arr.ravel()
        fd_flat = fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at(params)
            flat[i] = orig - step
            down = loss_at(params)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * step)
        scale = max(np.max(np.abs(analytic), initial=0.0),
                    np.max(np.abs(fd), initial=0.0), floor)
        err = float(np.max(np.abs(analytic - fd), initial=0.0) / scale)
        per_tensor[name] = err
        if err > worst[0]:
            worst = (err, name)
    return GradCheckReport(worst[0], worst[1], tolerance, per_tensor)


# ---------------------------------------------------------------------------
# Adapter placement sweep

def layer_sweep(corpus_train: list[AnnotatedPost], corpus_val: list[AnnotatedPost],
                bank_texts: list[str], model_config: ModelConfig,
                train_config: TrainConfig, layers: list[int]) -> list[dict]:
    """Train one model per insertion layer; same seed and data throughout."""
    if not layers:
        raise ValueError("no layers to sweep")
    rows = []
    for layer in layers:
        if not 1 <= layer <= model_config.layers:
            raise ValueError(f"adapter layer {layer} outside [1, {model_config.layers}]")
        tc = replace(train_config, adapter_layer=layer)
        result = train(corpus_train, corpus_val, bank_texts, model_config, tc)
        mc = result.model_config
        bank = build_bank(bank_texts, result.vocab, result.params, mc) if mc.use_descnet else None
        val_ex = prepare_examples(corpus_val, result.vocab, mc)
        _p, _r, f1, dsc = evaluate_split(result.params, mc, val_ex, bank)
        rows.append({"layer": layer, "f1": f1, "dsc": dsc})
    return rows

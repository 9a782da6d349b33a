import numpy as np
import pytest

from claimspan.encoder import ModelConfig
from claimspan.model import Vocabulary, init_model_params
from claimspan.preprocess import AnnotatedPost, CharSpan


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(d=16, h=2, d_ff=32, layers=2, max_len=16, vocab_size=64,
                       dropout_p=0.0, adapter_layer=2, seed=0)


@pytest.fixture
def tiny_vocab() -> Vocabulary:
    words = [["the", "news", "said", "garlic", "cures", "covid19", "flu",
              "bleach", "prevents", "today", "people", "share", "claims",
              "numbers", "quote", "someone", "from", "a", "with"]]
    return Vocabulary.build(words, 64)


@pytest.fixture
def tiny_params(tiny_config, tiny_vocab):
    rng = np.random.default_rng(tiny_config.seed)
    return init_model_params(tiny_config, len(tiny_vocab), 2, rng)


def make_post(pid: str, text: str, spans) -> AnnotatedPost:
    return AnnotatedPost(id=pid, text=text, spans=[CharSpan(s, e) for s, e in spans])


@pytest.fixture
def small_corpus() -> list:
    return [
        make_post("p0", "the news said garlic cures covid19 today", [(14, 34)]),
        make_post("p1", "people share bleach prevents flu claims", [(13, 32)]),
        make_post("p2", "today the news said people share numbers", []),
        make_post("p3", "garlic cures flu said someone today", [(0, 16)]),
    ]

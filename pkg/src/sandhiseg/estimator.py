"""scikit-learn style front end for the whole pipeline."""
from __future__ import annotations

import dataclasses

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import ParallelCorpus
from .evaluation import evaluate_corpus
from .seq2seq import ModelConfig, segment_batch, train
from .subword import SubwordVocab, learn_vocab
from .validation import check_paired, check_text_sequence


class SandhiSplitter(BaseEstimator):
    """Learn to split sandhied strings into their word forms.

    ``fit(X, y)`` takes sandhied strings ``X`` and the matching space-separated
    unsandhied strings ``y``. It learns a shared subword vocabulary over both
    sides (unless ``vocab`` is given) and trains the encoder-decoder.
    ``predict`` returns one word list per input; ``score`` is micro F.

    Fitted attributes: ``vocab_``, ``checkpoint_``, ``loss_curve_``.
    """

    def __init__(
        self,
        vocab_size=8000,
        num_layers=3,
        embed_dim=128,
        hidden_dim=128,
        attention=True,
        dropout_rate=0.2,
        max_seq_len=35,
        batch_size=128,
        lr=0.001,
        beta1=0.9,
        beta2=0.999,
        epochs=80,
        clip_norm=0.0,
        seed=0,
        vocab=None,
    ):
        self.vocab_size = vocab_size
        self.num_layers = num_layers
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.attention = attention
        self.dropout_rate = dropout_rate
        self.max_seq_len = max_seq_len
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.seed = seed
        self.vocab = vocab

    def model_config(self) -> ModelConfig:
        names = {f.name for f in dataclasses.fields(ModelConfig)}
        return ModelConfig(**{k: v for k, v in self.get_params().items() if k in names}).validate()

    def fit(self, X, y):
        sources, targets = check_paired(X, y)
        corpus = ParallelCorpus(list(zip(sources, targets)))
        if self.vocab is not None:
            if not isinstance(self.vocab, SubwordVocab):
                raise TypeError("vocab must be a SubwordVocab")
            self.vocab_ = self.vocab
        else:
            self.vocab_ = learn_vocab(corpus.lines(), self.vocab_size)
        result = train(corpus, self.vocab_, self.model_config())
        self.checkpoint_ = result.checkpoint
        self.loss_curve_ = result.loss_curve
        return self

    def predict(self, X):
        check_is_fitted(self, "checkpoint_")
        texts = check_text_sequence(X, "X", allow_empty=True)
        return segment_batch(texts, self.checkpoint_, self.vocab_)

    def score(self, X, y):
        """Micro-averaged word F-score of ``predict(X)`` against ``y``."""
        _, gold = check_paired(X, y)
        return evaluate_corpus(self.predict(X), gold).micro_f

"""Subword encoder-decoder word segmentation for sandhied Sanskrit text."""
from .corpus import ParallelCorpus, read_corpus, write_corpus
from .estimator import SandhiSplitter
from .evaluation import EvalReport, SentenceResult, evaluate_corpus, micro_average, sentence_match
from .sandhi import (
    Lexicon,
    SandhiRule,
    SandhiRuleSet,
    apply_rule,
    default_lexicon,
    default_rules,
    generate_corpus,
    generate_pair,
)
from .seq2seq import (
    ModelCheckpoint,
    ModelConfig,
    greedy_decode,
    load_checkpoint,
    prepare_example,
    save_checkpoint,
    segment,
    train,
)
from .subword import GibberishVocab, SubwordVocab, decode_pieces, encode_pieces, learn_vocab, load_vocab, save_vocab

__version__ = "0.1.0"

"""News-driven next-day stock movement classification with a dual-attention
GRU: entity-graph relevance filtering, averaged word embeddings, headline and
day attention, a from-scratch GRU with exact gradients, Adam training, MCC
evaluation, and attention-weight explanation reports."""

from .corpus import (
    DayBucket,
    EntityGraph,
    NewsItem,
    PriceBar,
    Splits,
    Window,
    bucket_by_day,
    embed_buckets,
    filter_relevant,
    load_entity_graph,
    load_news,
    load_prices,
    make_windows,
    split_chronological,
    synth_generate,
)
from .evaluation import ConfusionMatrix, accuracy, confusion, evaluate_windows, explain, mcc, render_report
from .model import ForwardTrace, ModelConfig, ModelParams, forward, forward_window, init_params
from .numerics import NumericalError, Rng
from .textenc import EmbeddingTable, embed_sentence, load_embeddings, tokenize
from .train import (
    AdamState,
    Checkpoint,
    TrainConfig,
    adam_step,
    backward,
    cross_entropy,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train_loop,
)

__version__ = "0.1.0"

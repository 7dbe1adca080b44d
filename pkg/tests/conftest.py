"""Shared pipeline helpers for tests: build embedded windows from a synthetic
corpus through the same loaders the CLI uses."""

import json

from newsgru import textenc
from newsgru.corpus import (
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
from newsgru.numerics import Rng


def build_synth_windows(out_dir, seed, n_days, signal, dim=16):
    """synth corpus -> loaded, filtered, embedded windows plus ground truth."""
    result = synth_generate(Rng(seed), n_days, signal, out_dir, dim=dim)
    news = load_news(result.news_path)
    prices = load_prices(result.prices_path)
    graph = load_entity_graph(result.graph_path)
    kept = filter_relevant(news, graph)
    buckets = bucket_by_day(kept, prices)
    table = textenc.load_embeddings(result.embeddings_path)
    embed_buckets(buckets, table)
    windows = make_windows(buckets, prices)
    truth = [json.loads(line) for line in
             result.truth_path.read_text().splitlines()]
    return windows, truth, result


def build_synth_splits(out_dir, seed, n_days, signal, dim=16,
                       train_frac=0.804, val_frac=0.098):
    windows, truth, result = build_synth_windows(out_dir, seed, n_days, signal, dim)
    return split_chronological(windows, train_frac, val_frac), truth, result

"""News and price ingestion, entity-graph relevance filtering, trading-day
bucketing, 7-day labeled windows, chronological splits, and a synthetic
planted-signal corpus generator for end-to-end verification."""

from __future__ import annotations

import bisect
import csv
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

import numpy as np

from . import textenc
from .numerics import Rng

__all__ = [
    "DayBucket",
    "EntityGraph",
    "NewsItem",
    "PriceBar",
    "Splits",
    "SynthCorpus",
    "Window",
    "bucket_by_day",
    "bundled_entity_graph_path",
    "embed_buckets",
    "filter_relevant",
    "load_entity_graph",
    "load_news",
    "load_prices",
    "make_windows",
    "split_chronological",
    "synth_generate",
]

log = logging.getLogger(__name__)

WINDOW_DAYS = 7

LABEL_MODES = ("close_to_close", "open_to_open")


@dataclass
class NewsItem:
    date: date
    headline: str
    source: str | None = None
    matched_entities: list[str] = field(default_factory=list)
    line_no: int | None = None


@dataclass
class PriceBar:
    date: date
    open: float
    high: float
    low: float
    close: float
    volume: int


@dataclass
class DayBucket:
    """All headlines assigned to one trading day, plus their embedding rows."""

    trading_date: date
    items: list[NewsItem] = field(default_factory=list)
    embeddings: np.ndarray | None = None  # (n, d) once embed_buckets has run


@dataclass
class Window:
    """Seven consecutive trading days of news preceding a prediction day."""

    days: list[DayBucket]
    label: int  # 1 = rise, 0 = fall
    prediction_date: date


@dataclass
class Splits:
    train: list[Window]
    val: list[Window]
    test: list[Window]


class _Related:
    def __init__(self, name: str, relation: str, aliases: list[str]):
        if not aliases:
            raise ValueError(f"related entity {name!r} has an empty alias list")
        self.name = name
        self.relation = relation
        self.aliases = [a.lower() for a in aliases]


class EntityGraph:
    """A company, its aliases, and related entities whose news also counts."""

    def __init__(self, company: str, aliases: list[str], related: list[dict]):
        if not aliases:
            raise ValueError(f"company {company!r} has an empty alias list")
        self.company = company
        self.aliases = [a.lower() for a in aliases]
        self.related = [
            _Related(r["name"], r.get("relation", ""), r["aliases"]) for r in related
        ]
        # one compiled pattern per entity; word-boundary, case-insensitive
        self._patterns: list[tuple[str, re.Pattern]] = []
        for name, aliases_ in [(company, self.aliases)] + [
            (r.name, r.aliases) for r in self.related
        ]:
            alts = "|".join(re.escape(a) for a in aliases_)
            self._patterns.append((name, re.compile(rf"\b(?:{alts})\b", re.IGNORECASE)))

    def match(self, headline: str) -> list[str]:
        """Entity names whose aliases occur in the headline as whole words."""
        return [name for name, pat in self._patterns if pat.search(headline)]


def load_entity_graph(path: str | Path) -> EntityGraph:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return EntityGraph(doc["company"], doc["aliases"], doc.get("related", []))


def bundled_entity_graph_path() -> Path:
    """Path of the bundled Google entity-graph fixture."""
    return Path(str(resources.files("newsgru").joinpath("data/google_entity_graph.json")))


def _parse_date(text: str) -> date:
    d = date.fromisoformat(text)
    return d


def load_news(path: str | Path) -> list[NewsItem]:
    """Parse a JSONL news file into items, skipping malformed lines.

    A line is malformed if it is not a JSON object, lacks a parseable
    YYYY-MM-DD date, or has an empty headline. Malformed lines are counted
    and reported; more than 10% malformed is a hard error.
    """
    items: list[NewsItem] = []
    bad = 0
    total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                doc = json.loads(line)
                headline = str(doc["headline"]).strip()
                if not headline:
                    raise ValueError("empty headline")
                item = NewsItem(
                    date=_parse_date(doc["date"]),
                    headline=headline,
                    source=doc.get("source"),
                    line_no=lineno,
                )
            except (ValueError, KeyError, TypeError) as exc:
                bad += 1
                log.warning("%s: line %d skipped (%s)", path, lineno, exc)
                continue
            items.append(item)
    if total and bad / total > 0.10:
        raise ValueError(
            f"{path}: {bad} of {total} lines malformed (more than 10%)"
        )
    if bad:
        log.warning("%s: skipped %d of %d malformed lines", path, bad, total)
    return items


def load_prices(path: str | Path) -> list[PriceBar]:
    """Parse and validate a CSV of daily bars, strictly increasing by date."""
    bars: list[PriceBar] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"date", "open", "high", "low", "close", "volume"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(required)}")
        for rowno, row in enumerate(reader, start=2):
            try:
                bar = PriceBar(
                    date=_parse_date(row["date"]),
                    open=float(row["open"]),
                    high=float(row["high"]),
                    low=float(row["low"]),
                    close=float(row["close"]),
                    volume=int(float(row["volume"])),
                )
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}: row {rowno}: {exc}") from None
            if min(bar.open, bar.high, bar.low, bar.close) <= 0:
                raise ValueError(f"{path}: row {rowno}: non-positive price")
            if not (bar.low <= bar.open <= bar.high and bar.low <= bar.close <= bar.high):
                raise ValueError(
                    f"{path}: row {rowno}: open/close outside the low/high range"
                )
            if bars and bar.date <= bars[-1].date:
                raise ValueError(
                    f"{path}: row {rowno}: date {bar.date} not after {bars[-1].date}"
                )
            bars.append(bar)
    return bars


def filter_relevant(news: list[NewsItem], graph: EntityGraph) -> list[NewsItem]:
    """Keep items mentioning the company or a related entity; fill matches.

    Matching is case-insensitive on whole words, so an alias never matches
    inside a longer token. Input order is preserved.
    """
    kept = []
    for item in news:
        matched = graph.match(item.headline)
        if matched:
            item.matched_entities = matched
            kept.append(item)
    return kept


def bucket_by_day(news: list[NewsItem], prices: list[PriceBar]) -> list[DayBucket]:
    """Assign news to trading days taken from the price series.

    News dated on a non-trading day moves forward to the next trading day;
    news after the last trading day is dropped (with a logged count). Items
    keep their input order within each bucket.
    """
    if not prices:
        raise ValueError("bucket_by_day needs a non-empty price series")
    dates = [bar.date for bar in prices]
    buckets = [DayBucket(trading_date=d) for d in dates]
    dropped = 0
    for item in news:
        idx = bisect.bisect_left(dates, item.date)
        if idx == len(dates):
            dropped += 1
            continue
        buckets[idx].items.append(item)
    if dropped:
        log.warning("dropped %d news items dated after the last trading day", dropped)
    return buckets


def embed_buckets(buckets: list[DayBucket], table: textenc.EmbeddingTable,
                  stopwords: set[str] | None = None,
                  max_tokens: int = textenc.DEFAULT_MAX_TOKENS) -> None:
    """Fill each bucket's (n, d) embedding matrix from its headlines."""
    if stopwords is None:
        stopwords = textenc.default_stopwords()
    for bucket in buckets:
        rows = []
        for item in bucket.items:
            tokens = textenc.tokenize(item.headline, stopwords, max_tokens)
            rows.append(textenc.embed_sentence(tokens, table).vec)
        if rows:
            bucket.embeddings = np.vstack(rows)
        else:
            bucket.embeddings = np.zeros((0, table.dim), dtype=np.float64)


def make_windows(buckets: list[DayBucket], prices: list[PriceBar],
                 label_mode: str = "close_to_close") -> list[Window]:
    """One window per trading day with seven predecessors.

    close_to_close labels day d by close(d) > close(d-1); open_to_open uses
    open(d) > open(d-1). A flat price is labeled 0.
    """
    if label_mode not in LABEL_MODES:
        raise ValueError(f"unknown label_mode {label_mode!r}, expected {LABEL_MODES}")
    if len(buckets) != len(prices):
        raise ValueError(
            f"bucket/price length mismatch: {len(buckets)} vs {len(prices)}"
        )
    if len(prices) < WINDOW_DAYS + 1:
        raise ValueError(
            f"need at least {WINDOW_DAYS + 1} trading days, got {len(prices)}"
        )
    windows = []
    for i in range(WINDOW_DAYS, len(prices)):
        if label_mode == "close_to_close":
            rise = prices[i].close > prices[i - 1].close
        else:
            rise = prices[i].open > prices[i - 1].open
        windows.append(
            Window(
                days=buckets[i - WINDOW_DAYS:i],
                label=int(rise),
                prediction_date=prices[i].date,
            )
        )
    return windows


def split_chronological(windows: list[Window], train_frac: float = 0.804,
                        val_frac: float = 0.098) -> Splits:
    """Contiguous chronological partition: train, then val, then test."""
    if train_frac <= 0 or val_frac <= 0 or train_frac + val_frac >= 1:
        raise ValueError(
            f"fractions must be positive and sum below 1, got {train_frac}, {val_frac}"
        )
    n = len(windows)
    n_train = int(n * train_frac + 0.5)
    n_val = int(n * val_frac + 0.5)
    n_test = n - n_train - n_val
    if n_train < 1 or n_val < 1 or n_test < 1:
        raise ValueError(
            f"empty split: {n} windows give {n_train}/{n_val}/{n_test}"
        )
    return Splits(
        train=windows[:n_train],
        val=windows[n_train:n_train + n_val],
        test=windows[n_train + n_val:],
    )


# ---------------------------------------------------------------------------
# Synthetic planted-signal corpus
# ---------------------------------------------------------------------------

_SYNTH_COMPANY = "Acme Corp"
_SYNTH_ALIASES = ["acme"]
_SYNTH_RELATED = [
    {"name": "Apex Labs", "relation": "subsidiary", "aliases": ["apex"]},
    {"name": "Bolt Motors", "relation": "partner", "aliases": ["bolt"]},
]
_SUBJECTS = ["acme", "apex", "bolt"]
_PLACES = ["denver", "austin", "dublin", "osaka"]
_NOISE_TEMPLATES = [
    "{subj} managers discuss quarterly planning",
    "{subj} opens new office in {place}",
    "analysts watch {subj} ahead of earnings",
    "{subj} board meets with union representatives",
    "{subj} sponsors technology conference in {place}",
    "report examines {subj} supply chain practices",
    "{subj} updates corporate travel policy",
    "local paper profiles {subj} factory workers",
]
_UP_REASONS = ["record profits", "strong guidance", "upbeat outlook"]
_DOWN_REASONS = ["weak sales", "regulatory probe", "production halt"]

UP_TOKEN = "surge"
DOWN_TOKEN = "plunge"


@dataclass
class SynthCorpus:
    news_path: Path
    prices_path: Path
    graph_path: Path
    embeddings_path: Path
    truth_path: Path
    n_days: int
    dim: int


def _next_weekday(d: date) -> date:
    d = d + timedelta(days=1)
    while d.weekday() >= 5:
        d += timedelta(days=1)
    return d


def synth_generate(rng: Rng, n_days: int, signal_strength: float,
                   out_dir: str | Path, dim: int = 16) -> SynthCorpus:
    """Write a self-contained fixture corpus with a plantable causal signal.

    Each trading day carries 1 to 5 headlines. With probability
    signal_strength, the day before a price move gets one headline holding
    the planted token whose direction matches the move (UP_TOKEN for a rise,
    DOWN_TOKEN for a fall); every other headline is template noise. The
    ground-truth JSONL records, per prediction day, the label and the
    [day_index, headline_index] of the causal headline within its window
    (day_index 6 is the last window day), or null when nothing was planted.
    """
    if n_days < 30:
        raise ValueError(f"synth_generate needs n_days >= 30, got {n_days}")
    if not 0.0 <= signal_strength <= 1.0:
        raise ValueError(f"signal_strength must be in [0, 1], got {signal_strength}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    days = []
    d = date(2015, 1, 5)
    for _ in range(n_days):
        days.append(d)
        d = _next_weekday(d)

    # direction[j] drives close(j) relative to close(j-1), j >= 1
    direction = [rng.integers(2) for _ in range(n_days)]
    planted: list[int | None] = [None] * n_days  # per-day index of the causal headline
    headlines: list[list[str]] = []
    for j in range(n_days):
        n_items = 1 + rng.integers(5)
        day_lines = []
        for _ in range(n_items):
            subj = _SUBJECTS[rng.integers(len(_SUBJECTS))]
            tpl = _NOISE_TEMPLATES[rng.integers(len(_NOISE_TEMPLATES))]
            day_lines.append(
                tpl.format(subj=subj, place=_PLACES[rng.integers(len(_PLACES))])
            )
        if j + 1 < n_days and rng.random() < signal_strength:
            subj = _SUBJECTS[rng.integers(len(_SUBJECTS))]
            if direction[j + 1] == 1:
                line = f"{subj} shares {UP_TOKEN} after {_UP_REASONS[rng.integers(3)]}"
            else:
                line = f"{subj} shares {DOWN_TOKEN} after {_DOWN_REASONS[rng.integers(3)]}"
            idx = rng.integers(n_items)
            day_lines[idx] = line
            planted[j] = idx
        headlines.append(day_lines)

    closes = [100.0]
    for j in range(1, n_days):
        move = 0.005 + 0.025 * rng.random()
        factor = 1.0 + move if direction[j] == 1 else 1.0 - move
        closes.append(closes[-1] * factor)

    news_path = out_dir / "news.jsonl"
    with open(news_path, "w", encoding="utf-8") as fh:
        for j, day_lines in enumerate(headlines):
            for line in day_lines:
                fh.write(json.dumps({
                    "date": days[j].isoformat(),
                    "headline": line,
                    "source": "synth",
                }) + "\n")

    prices_path = out_dir / "prices.csv"
    with open(prices_path, "w", encoding="utf-8") as fh:
        fh.write("date,open,high,low,close,volume\n")
        for j in range(n_days):
            opn = closes[j - 1] if j > 0 else closes[0] * 0.995
            hi = max(opn, closes[j]) * (1.002 + 0.008 * rng.random())
            lo = min(opn, closes[j]) * (0.998 - 0.008 * rng.random())
            vol = 100_000 + rng.integers(900_000)
            fh.write(
                f"{days[j].isoformat()},{opn!r},{hi!r},{lo!r},{closes[j]!r},{vol}\n"
            )

    graph_path = out_dir / "entities.json"
    with open(graph_path, "w", encoding="utf-8") as fh:
        json.dump({
            "company": _SYNTH_COMPANY,
            "aliases": _SYNTH_ALIASES,
            "related": _SYNTH_RELATED,
        }, fh, indent=2)
        fh.write("\n")

    vocab = sorted({tok for day_lines in headlines for line in day_lines
                    for tok in textenc.tokenize(line)})
    embeddings_path = out_dir / "embeddings.txt"
    with open(embeddings_path, "w", encoding="utf-8") as fh:
        for tok in vocab:
            vec = rng.uniform(-1.0, 1.0, (dim,))
            fh.write(tok + " " + " ".join(repr(float(v)) for v in vec) + "\n")

    truth_path = out_dir / "truth.jsonl"
    with open(truth_path, "w", encoding="utf-8") as fh:
        for j in range(WINDOW_DAYS, n_days):
            causal = None
            if planted[j - 1] is not None:
                causal = [WINDOW_DAYS - 1, planted[j - 1]]
            fh.write(json.dumps({
                "prediction_date": days[j].isoformat(),
                "causal_headline_index": causal,
                "label": direction[j],
            }) + "\n")

    return SynthCorpus(
        news_path=news_path,
        prices_path=prices_path,
        graph_path=graph_path,
        embeddings_path=embeddings_path,
        truth_path=truth_path,
        n_days=n_days,
        dim=dim,
    )

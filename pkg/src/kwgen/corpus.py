"""Tokenization, vocabulary, corpus files, and the synthetic click-log generator.

The synthetic generator stands in for an organic query/title click log: every
title paraphrases its query through a small template grammar, a configurable
fraction of the keyword inventory actually occurs among titles (so a trained
model can reach it), and the rest are distractors that only the prefix tree
ever sees.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
BOS_TOKEN = "<s>"
EOS_TOKEN = "<e>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)


def tokenize(text: str) -> list[str]:
    """Lowercase + whitespace split; total on any string."""
    return text.lower().split()


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token<->id map with reserved BOS/EOS/UNK ids 0/1/2."""

    token_to_id: dict[str, int]
    id_to_token: list[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        t2i = self.token_to_id
        return [t2i.get(tok, UNK_ID) for tok in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def text_to_ids(self, text: str) -> list[int]:
        return self.encode(tokenize(text))

    def ids_to_text(self, ids: Sequence[int]) -> str:
        return " ".join(self.decode(ids))


def build_vocab(corpus: Sequence[tuple[str, str]], max_size: int) -> Vocabulary:
    """Keep the most frequent corpus tokens after the 3 reserved entries.

    Frequency ties break lexicographically ascending so the result is
    deterministic.  ``max_size=3`` leaves only the reserved entries.
    """
    if max_size < 3:
        raise ValueError(f"max_size must be >= 3, got {max_size}")
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for source, target in corpus:
        counts.update(tokenize(source))
        counts.update(tokenize(target))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 3]]
    id_to_token = list(RESERVED_TOKENS) + kept
    token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
    return Vocabulary(token_to_id=token_to_id, id_to_token=id_to_token)


def encode_tokens(vocab: Vocabulary, tokens: Sequence[str]) -> list[int]:
    return vocab.encode(tokens)


@dataclass(frozen=True)
class ParallelPair:
    """A (query, title/keyword) pair as token-id sequences, no BOS/EOS inside."""

    source: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.source or not self.target:
            raise ValueError("parallel pair sides must be non-empty")
        for seq in (self.source, self.target):
            if any(i in (BOS_ID, EOS_ID) for i in seq):
                raise ValueError("BOS/EOS must not appear inside a pair")


def encode_corpus(vocab: Vocabulary, pairs: Sequence[tuple[str, str]]) -> list[ParallelPair]:
    """Encode raw text pairs, dropping pairs with an empty side after tokenization."""
    out = []
    for src, tgt in pairs:
        s = tuple(vocab.text_to_ids(src))
        t = tuple(vocab.text_to_ids(tgt))
        if s and t:
            out.append(ParallelPair(source=s, target=t))
    return out


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

SUBJECTS = [
    "shoes", "shirt", "jacket", "jeans", "dress", "boots", "sneakers", "scarf",
    "sweater", "hoodie", "coat", "gloves", "socks", "belt", "hat", "cap",
    "skirt", "blouse", "vest", "pajamas", "sandals", "loafers", "heels", "slippers",
    "phone", "laptop", "tablet", "camera", "monitor", "keyboard", "mouse", "printer",
    "headphones", "speaker", "charger", "router", "projector", "microphone", "drone", "console",
    "television", "soundbar", "earbuds", "webcam", "scanner", "modem", "tripod", "lens",
    "watch", "bracelet", "ring", "necklace", "earrings", "pendant", "brooch", "cufflinks",
    "sofa", "table", "chair", "lamp", "desk", "shelf", "mattress", "curtain",
    "dresser", "wardrobe", "bench", "stool", "ottoman", "recliner", "bookcase", "nightstand",
    "rug", "mirror", "cushion", "blanket", "pillow", "headboard", "cabinet", "sideboard",
    "bike", "scooter", "helmet", "tent", "backpack", "kayak", "skates", "treadmill",
    "dumbbells", "racket", "surfboard", "snowboard", "skis", "paddle", "wetsuit", "goggles",
    "compass", "binoculars", "hammock", "lantern", "cooler", "thermos", "canteen", "flashlight",
    "guitar", "piano", "violin", "drums", "trumpet", "flute", "cello", "banjo",
    "ukulele", "harmonica", "saxophone", "keytar", "accordion", "mandolin", "tambourine", "xylophone",
    "blender", "toaster", "kettle", "grill", "skillet", "saucepan", "wok", "griddle",
    "mixer", "juicer", "steamer", "fryer", "teapot", "carafe", "colander", "whisk",
    "spatula", "ladle", "grater", "peeler", "corkscrew", "chopsticks", "tongs", "masher",
    "drill", "hammer", "wrench", "screwdriver", "pliers", "sander", "chisel", "clamp",
    "sawhorse", "toolbox", "workbench", "grinder", "welder", "jigsaw", "lathe", "vise",
    "mower", "trimmer", "shovel", "rake", "hoe", "pruner", "sprinkler", "wheelbarrow",
    "planter", "trellis", "birdbath", "composter", "greenhouse", "hedger", "spreader", "tiller",
    "stroller", "crib", "playpen", "highchair", "walker", "bassinet", "rocker", "bouncer",
    "puzzle", "kite", "yoyo", "marbles", "dominoes", "checkers", "darts", "frisbee",
    "umbrella", "raincoat", "poncho", "parka", "windbreaker", "overalls", "apron", "uniform",
    "suitcase", "duffel", "briefcase", "satchel", "wallet", "purse", "keychain", "organizer",
    "humidifier", "dehumidifier", "purifier", "heater", "fan", "thermostat", "doorbell", "intercom",
    "aquarium", "terrarium", "birdcage", "kennel", "leash", "harness", "feeder", "scratcher",
]

ATTRIBUTES = [
    "red", "blue", "green", "black", "white", "silver", "golden", "purple",
    "orange", "yellow", "pink", "brown", "gray", "beige", "teal", "maroon",
    "crimson", "navy", "olive", "turquoise", "ivory", "charcoal", "coral", "lavender",
    "cheap", "premium", "budget", "luxury", "compact", "portable", "foldable", "ergonomic",
    "affordable", "deluxe", "economy", "professional", "standard", "basic", "advanced", "entry",
    "wireless", "bluetooth", "digital", "smart", "electric", "manual", "solar", "hybrid",
    "cordless", "rechargeable", "programmable", "automatic", "mechanical", "magnetic", "optical", "acoustic",
    "vintage", "modern", "classic", "rustic", "leather", "wooden", "steel", "ceramic",
    "bamboo", "marble", "copper", "brass", "chrome", "titanium", "velvet", "linen",
    "cotton", "woolen", "silk", "denim", "suede", "canvas", "nylon", "rubber",
    "waterproof", "lightweight", "heavy", "slim", "wide", "tall", "mini", "giant",
    "oversized", "narrow", "thick", "thin", "curved", "flat", "round", "square",
    "quiet", "fast", "durable", "soft", "warm", "cool", "bright", "matte",
    "glossy", "sturdy", "flexible", "breathable", "insulated", "padded", "reinforced", "polished",
    "handmade", "imported", "organic", "recycled", "antique", "refurbished", "certified", "patented",
    "adjustable", "stackable", "washable", "reversible", "collapsible", "detachable", "extendable", "swivel",
    "heated", "cooled", "ventilated", "cushioned", "weighted", "balanced", "tapered", "ribbed",
    "striped", "dotted", "floral", "plaid", "embroidered", "engraved", "painted", "lacquered",
    "frosted", "tinted", "transparent", "opaque", "metallic", "pearl", "satin", "gloss",
    "compactable", "modular", "pocket", "travel", "outdoor", "indoor", "marine", "alpine",
    "junior", "senior", "unisex", "youth", "toddler", "infant", "adult", "family",
    "spare", "replacement", "universal", "bespoke", "signature", "limited", "exclusive", "seasonal",
    "quilted", "woven", "knitted", "brushed", "anodized", "galvanized", "tempered", "laminated",
    "ultralight", "heavyduty", "shockproof", "windproof", "dustproof", "stainproof", "scratchproof", "fireproof",
    "scandinavian", "italian", "japanese", "nordic", "tropical", "coastal", "urban", "industrial",
    "victorian", "bohemian", "minimalist", "ornate", "sleek", "chunky", "petite", "jumbo",
    "silent", "turbo", "eco", "hypoallergenic", "antibacterial", "odorless", "fragrant", "glowing",
    "foldaway", "wallmounted", "freestanding", "builtin", "corner", "rolling", "hanging", "floating",
]

KEYWORD_LEADS = ["buy", "best", "discount", "order", "custom", "cheapest", "wholesale", "genuine"]
KEYWORD_TRAILS = ["online", "price", "sale", "deal", "shop", "store", "outlet", "delivery"]

# token patterns for keyword-shaped phrases; slots: L=lead, A=attr, S=subject, T=trail
_KEYWORD_PATTERNS = [
    ("A", "S"),
    ("L", "A", "S"),
    ("A", "S", "T"),
    ("L", "S", "T"),
    ("S", "T"),
    ("L", "A", "S", "T"),
    ("A", "A", "S"),
    ("L", "A", "A", "S", "T"),
]

QUERY_TEMPLATES = [
    "where to get {a} {s}",
    "how to choose {a} {s}",
    "looking for {a} {s}",
    "i want a {a} {s}",
    "good {a} {s} near me",
    "what is the top {a} {s}",
    "need {a} {s} now",
    "find me {a} {s}",
    "{a} {s} for my home",
    "show {a} {s} options",
]

# non-keyword titles carry a marker word that the keyword grammar never uses
_REVIEW_TITLE_TEMPLATES = [
    "{a} {s} review and guide",
    "guide to {a} {s} models",
    "top rated {a} {s} compared",
    "{a} {s} buying tips",
    "everything about {a} {s}",
]


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs for the seeded synthetic corpus + keyword inventory."""

    seed: int = 0
    num_pairs: int = 2000
    keyword_count: int = 200
    template_count: int = 8
    overlap_fraction: float = 0.5

    def __post_init__(self) -> None:
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        if self.keyword_count < 1:
            raise ValueError("keyword_count must be >= 1 (closed set must be non-empty)")
        if not 1 <= self.template_count <= len(QUERY_TEMPLATES):
            raise ValueError(f"template_count must be in 1..{len(QUERY_TEMPLATES)}")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1]")


def _keyword_phrase(rng: random.Random) -> str:
    pattern = rng.choice(_KEYWORD_PATTERNS)
    attrs = rng.sample(ATTRIBUTES, 2)
    ai = 0
    words = []
    for slot in pattern:
        if slot == "L":
            words.append(rng.choice(KEYWORD_LEADS))
        elif slot == "A":
            words.append(attrs[ai])
            ai += 1
        elif slot == "S":
            words.append(rng.choice(SUBJECTS))
        else:
            words.append(rng.choice(KEYWORD_TRAILS))
    return " ".join(words)


def _keyword_title(rng: random.Random, attr: str, subj: str) -> str:
    pattern = rng.choice(_KEYWORD_PATTERNS)
    second = rng.choice(ATTRIBUTES)
    while second == attr:
        second = rng.choice(ATTRIBUTES)
    attrs = [attr, second]
    ai = 0
    words = []
    for slot in pattern:
        if slot == "L":
            words.append(rng.choice(KEYWORD_LEADS))
        elif slot == "A":
            words.append(attrs[ai])
            ai += 1
        elif slot == "S":
            words.append(subj)
        else:
            words.append(rng.choice(KEYWORD_TRAILS))
    return " ".join(words)


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[tuple[str, str]], list[str]]:
    """Deterministic synthetic (query, title) pairs plus a keyword inventory.

    Exactly ``round(overlap_fraction * keyword_count)`` keywords occur among
    the generated titles; the remaining keywords never do.
    """
    rng = random.Random(spec.seed)
    templates = QUERY_TEMPLATES[: spec.template_count]

    pairs: list[tuple[str, str]] = []
    title_set: set[str] = set()
    keyword_shaped: list[str] = []  # ordered, deduplicated
    keyword_shaped_seen: set[str] = set()
    for _ in range(spec.num_pairs):
        attr = rng.choice(ATTRIBUTES)
        subj = rng.choice(SUBJECTS)
        query = rng.choice(templates).format(a=attr, s=subj)
        if rng.random() < 0.5:
            title = _keyword_title(rng, attr, subj)
            if title not in keyword_shaped_seen:
                keyword_shaped_seen.add(title)
                keyword_shaped.append(title)
        else:
            title = rng.choice(_REVIEW_TITLE_TEMPLATES).format(a=attr, s=subj)
        pairs.append((query, title))
        title_set.add(title)

    n_reach = round(spec.overlap_fraction * spec.keyword_count)
    if n_reach > len(keyword_shaped):
        raise ValueError(
            f"corpus yields only {len(keyword_shaped)} distinct keyword-shaped titles, "
            f"but overlap requires {n_reach}; raise num_pairs or lower overlap_fraction"
        )
    reachable = rng.sample(keyword_shaped, n_reach)

    corpus_tokens = set()
    for q, t in pairs:
        corpus_tokens.update(tokenize(q))
        corpus_tokens.update(tokenize(t))

    keywords = list(reachable)
    chosen = set(reachable)
    attempts = 0
    limit = 400 * spec.keyword_count + 1000
    while len(keywords) < spec.keyword_count:
        attempts += 1
        if attempts > limit:
            raise ValueError(
                "could not generate enough distinct distractor keywords; "
                "lower keyword_count or raise num_pairs"
            )
        cand = _keyword_phrase(rng)
        if cand in chosen or cand in title_set:
            continue
        if not all(tok in corpus_tokens for tok in tokenize(cand)):
            continue
        chosen.add(cand)
        keywords.append(cand)
    rng.shuffle(keywords)
    return pairs, keywords


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_pairs(path: str | Path, pairs: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for src, tgt in pairs:
            f.write(f"{src}\t{tgt}\n")


def read_pairs(
    path: str | Path, preprocess_title: Callable[[str], str] | None = None
) -> list[tuple[str, str]]:
    """One pair per line, source TAB target.

    ``preprocess_title`` is the ingestion hook for real click logs (e.g. a
    domain-name trimmer); synthetic data never needs it.
    """
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected a single TAB separator")
            src, tgt = line.split("\t", 1)
            if preprocess_title is not None:
                tgt = preprocess_title(tgt)
            pairs.append((src, tgt))
    return pairs


def write_lines(path: str | Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def read_lines(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def save_vocab(vocab: Vocabulary, path: str | Path) -> None:
    write_lines(path, vocab.id_to_token)


def load_vocab(path: str | Path) -> Vocabulary:
    tokens = read_lines(path)
    if tuple(tokens[:3]) != RESERVED_TOKENS:
        raise ValueError(f"{path}: vocabulary must start with {RESERVED_TOKENS}")
    token_to_id = {tok: i for i, tok in enumerate(tokens)}
    if len(token_to_id) != len(tokens):
        raise ValueError(f"{path}: duplicate token in vocabulary")
    return Vocabulary(token_to_id=token_to_id, id_to_token=tokens)

"""Corpus ingestion, text cleaning and the synthetic multilingual corpus."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NUM_CLASSES = 20

# Kept deliberately short; a language code missing here gets no stop-word filtering.
STOP_WORDS: dict[str, frozenset[str]] = {
    "en": frozenset(
        "a an the and or but if of to in on at by for with from is are was were be been "
        "it its this that these those i you he she we they me my your our their as so not".split()
    ),
    "es": frozenset(
        "el la los las un una unos unas y o pero si de del a en con por para es son fue "
        "ser que se lo le les mi tu su nuestro este esta eso no al como mas muy".split()
    ),
    "fr": frozenset(
        "le la les un une des et ou mais si de du au aux en dans sur par pour avec est "
        "sont etre que qui ce cet cette ces je tu il elle nous vous ils ne pas".split()
    ),
    "it": frozenset(
        "il lo la i gli le un uno una e o ma se di del della a da in con su per tra fra "
        "che chi non mi ti si ci vi questo questa quello sono era essere".split()
    ),
    "de": frozenset(
        "der die das ein eine einer und oder aber wenn von zu im in an auf mit aus bei "
        "fur ist sind war sein nicht ich du er sie es wir ihr dass den dem des".split()
    ),
}

_URL_PREFIXES = ("http://", "https://", "www.")


class DataError(ValueError):
    """Raised for unreadable or invalid corpus input."""


@dataclass(frozen=True)
class Example:
    id: int
    text: str
    label: int
    language: str


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    num_classes: int = DEFAULT_NUM_CLASSES
    languages: frozenset[str] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        seen = set()
        for ex in self.examples:
            if not 0 <= ex.label < self.num_classes:
                raise DataError(f"example {ex.id}: label {ex.label} outside [0, {self.num_classes})")
            if ex.id in seen:
                raise DataError(f"duplicate example id {ex.id}")
            seen.add(ex.id)
        object.__setattr__(self, "languages", frozenset(ex.language for ex in self.examples))

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(ex.id for ex in self.examples)

    def filter_language(self, language: str) -> "Dataset":
        return Dataset(tuple(ex for ex in self.examples if ex.language == language), self.num_classes)

    def reindexed(self, start: int) -> "Dataset":
        """Copy with ids renumbered consecutively from ``start`` (order kept)."""
        return Dataset(
            tuple(Example(start + i, ex.text, ex.label, ex.language) for i, ex in enumerate(self.examples)),
            self.num_classes,
        )

    def split_halves(self, seed: int) -> tuple["Dataset", "Dataset"]:
        """Seeded shuffle, then cut in two; the first half gets the extra example if odd."""
        order = np.random.default_rng(seed).permutation(len(self.examples))
        cut = (len(order) + 1) // 2
        first = tuple(self.examples[i] for i in order[:cut])
        second = tuple(self.examples[i] for i in order[cut:])
        return Dataset(first, self.num_classes), Dataset(second, self.num_classes)


def _collapse_runs(token: str) -> str:
    out = []
    prev = None
    for ch in token:
        if ch == prev and not ch.isalnum():
            continue
        out.append(ch)
        prev = ch
    return "".join(out)


def preprocess(text: str, language: str | None = None) -> str:
    """Lower-case, drop URL tokens, collapse repeated symbols, drop stop words.

    ``language`` selects the stop-word list; ``None`` or an unknown code
    disables stop-word filtering. Tokens are re-joined with single spaces.
    """
    stop = STOP_WORDS.get(language, frozenset()) if language else frozenset()
    kept = []
    for token in text.lower().split():
        if token.startswith(_URL_PREFIXES):
            continue
        token = _collapse_runs(token)
        if token in stop:
            continue
        kept.append(token)
    return " ".join(kept)


def load_tsv(path: str | os.PathLike, num_classes: int = DEFAULT_NUM_CLASSES) -> Dataset:
    """Read ``label<TAB>language<TAB>text`` rows (UTF-8, no header).

    Example ids are 0-based line numbers. Blank lines are skipped, rows whose
    text cleans to nothing are dropped.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise DataError(f"{path}: row {lineno + 1}: expected 3 tab-separated fields, got {len(parts)}")
            raw_label, language, text = parts
            try:
                label = int(raw_label)
            except ValueError:
                raise DataError(f"{path}: row {lineno + 1}: label {raw_label!r} is not an integer") from None
            if not 0 <= label < num_classes:
                raise DataError(f"{path}: row {lineno + 1}: label {label} outside [0, {num_classes})")
            language = language.strip()
            if not language:
                raise DataError(f"{path}: row {lineno + 1}: empty language code")
            cleaned = preprocess(text, language)
            if cleaned:
                examples.append(Example(lineno, cleaned, label, language))
    return Dataset(tuple(examples), num_classes)


def write_tsv(data: Dataset, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in data:
            fh.write(f"{ex.label}\t{ex.language}\t{ex.text}\n")


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Recipe for a deterministic bag-of-tokens corpus.

    Every class owns ``vocab_size_per_class`` signature tokens per language, no
    two classes share one. ``shared_fraction`` of them are spelled the same in
    every language, which is what lets a model transfer to a language it never
    saw. Each text draws a signature token with probability
    ``class_signal_strength`` and a language noise token otherwise.
    """

    num_classes: int = DEFAULT_NUM_CLASSES
    languages: tuple[str, ...] = ("en", "es", "fr", "it")
    examples_per_language: int = 500
    vocab_size_per_class: int = 20
    class_signal_strength: float = 0.6
    seed: int = 0
    shared_fraction: float = 0.5
    noise_vocab_size: int = 200
    min_tokens: int = 4
    max_tokens: int = 10

    def __post_init__(self):
        object.__setattr__(self, "languages", tuple(self.languages))
        if not self.languages:
            raise DataError("languages must be non-empty")
        if len(set(self.languages)) != len(self.languages):
            raise DataError(f"duplicate language codes in {self.languages}")
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.examples_per_language < self.num_classes:
            raise DataError(
                f"examples_per_language ({self.examples_per_language}) must be >= num_classes ({self.num_classes})"
            )
        if self.vocab_size_per_class < 1:
            raise DataError("vocab_size_per_class must be >= 1")
        if not 0.0 < self.class_signal_strength <= 1.0:
            raise DataError(f"class_signal_strength must be in (0, 1], got {self.class_signal_strength}")
        if not 0.0 <= self.shared_fraction <= 1.0:
            raise DataError(f"shared_fraction must be in [0, 1], got {self.shared_fraction}")
        if self.noise_vocab_size < 1:
            raise DataError("noise_vocab_size must be >= 1")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise DataError("need 1 <= min_tokens <= max_tokens")


def signature_tokens(spec: SyntheticCorpusSpec, language: str, label: int) -> list[str]:
    n_shared = int(round(spec.shared_fraction * spec.vocab_size_per_class))
    shared = [f"x{label}s{j}" for j in range(n_shared)]
    own = [f"{language}{label}s{j}" for j in range(n_shared, spec.vocab_size_per_class)]
    return shared + own


def generate_synthetic(spec: SyntheticCorpusSpec) -> Dataset:
    """Build the corpus described by ``spec``; same spec, same corpus.

    Languages are emitted in the order given, classes round-robin within a
    language so per-language class counts differ by at most one.
    """
    rng = np.random.default_rng(spec.seed)
    examples = []
    for language in spec.languages:
        noise = [f"{language}n{j}" for j in range(spec.noise_vocab_size)]
        signatures = [signature_tokens(spec, language, c) for c in range(spec.num_classes)]
        for i in range(spec.examples_per_language):
            label = i % spec.num_classes
            length = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
            is_signal = rng.random(length) < spec.class_signal_strength
            sig_pick = rng.integers(0, spec.vocab_size_per_class, size=length)
            noise_pick = rng.integers(0, spec.noise_vocab_size, size=length)
            tokens = [
                signatures[label][s] if flag else noise[z]
                for flag, s, z in zip(is_signal, sig_pick, noise_pick)
            ]
            text = preprocess(" ".join(tokens), language)
            examples.append(Example(len(examples), text, label, language))
    return Dataset(tuple(examples), spec.num_classes)

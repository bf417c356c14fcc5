"""Token-level data model, synthetic dataset generation, and JSONL I/O.

Two scenarios are generated: a noisy-quality scenario where a fraction of
training responses is corrupted, and a domain-labeled scenario where each
domain applies its own string transform and the holdout/test sets contain
only the target domain. Generation is a pure function of (config, seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

SFT = "sft"
PREF = "pref"

DEFAULT_ALPHABET = "abcdefghijklmnopqrstuvwxyz"

NOISE = "noise"
DOMAIN = "domain"


class TokenizeError(ValueError):
    """Raised when text contains a character outside the alphabet."""


class DatasetFormatError(ValueError):
    """Raised for malformed JSONL records or inconsistent datasets."""


@dataclass(frozen=True)
class Alphabet:
    """Character-level tokenizer over a fixed, small alphabet.

    Token ids are alphabet positions; id ``size`` and above are reserved
    for model-internal tokens (the separator in particular), so the model
    vocabulary must satisfy ``V > alphabet.size``.
    """

    chars: str = DEFAULT_ALPHABET

    def __post_init__(self) -> None:
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("alphabet characters must be unique")
        if not 1 <= len(self.chars) <= 63:
            raise ValueError("alphabet size must be in [1, 63]")

    @property
    def size(self) -> int:
        return len(self.chars)

    def tokenize(self, text: str) -> tuple[int, ...]:
        ids = []
        for pos, ch in enumerate(text):
            idx = self.chars.find(ch)
            if idx < 0:
                raise TokenizeError(f"unknown character {ch!r} at position {pos}")
            ids.append(idx)
        return tuple(ids)

    def detokenize(self, tokens) -> str:
        out = []
        for pos, tok in enumerate(tokens):
            if not 0 <= tok < self.size:
                raise TokenizeError(f"token id {tok} at position {pos} outside alphabet")
            out.append(self.chars[tok])
        return "".join(out)


@dataclass(frozen=True)
class Example:
    """One training unit: an instruction-response pair or a preference triple.

    ``corrupted`` is generator metadata used only by reports and tests;
    scorers never see it.
    """

    kind: str
    prompt: tuple[int, ...]
    response: tuple[int, ...] | None = None
    chosen: tuple[int, ...] | None = None
    rejected: tuple[int, ...] | None = None
    domain: int | None = None
    corrupted: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt", tuple(self.prompt))
        for name in ("response", "chosen", "rejected"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(val))
        if self.kind not in (SFT, PREF):
            raise ValueError(f"unknown example kind {self.kind!r}")
        if not self.prompt:
            raise ValueError("prompt may not be empty")
        if self.kind == SFT:
            if not self.response:
                raise ValueError("SFT example requires a nonempty response")
            if self.chosen is not None or self.rejected is not None:
                raise ValueError("SFT example may not carry chosen/rejected")
        else:
            if not self.chosen or not self.rejected:
                raise ValueError("preference example requires nonempty chosen and rejected")
            if self.response is not None:
                raise ValueError("preference example may not carry a response")

    def target(self) -> tuple[int, ...]:
        """The sequence a demonstration teaches: response for SFT, chosen for PREF."""
        return self.response if self.kind == SFT else self.chosen


@dataclass
class Dataset:
    """Ordered, kind-homogeneous list of examples; indices are stable ids."""

    kind: str
    examples: list[Example] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in (SFT, PREF):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        for i, ex in enumerate(self.examples):
            if ex.kind != self.kind:
                raise DatasetFormatError(f"example {i} has kind {ex.kind!r} in a {self.kind!r} dataset")

    def __len__(self) -> int:
        return len(self.examples)

    def __getitem__(self, idx: int) -> Example:
        return self.examples[idx]

    def __iter__(self):
        return iter(self.examples)


# Domain transforms, in fixed order; domain g uses TRANSFORMS[g].
def _t_reverse(s: str) -> str:
    return s[::-1]


def _t_shift(s: str) -> str:
    return s[1:] + s[:1]


def _t_sort(s: str) -> str:
    return "".join(sorted(s))


def _t_duplicate(s: str) -> str:
    return s + s


def _t_identity(s: str) -> str:
    return s


TRANSFORMS = (_t_reverse, _t_shift, _t_sort, _t_duplicate, _t_identity)
TRANSFORM_NAMES = ("reverse", "shift", "sort", "duplicate", "identity")


@dataclass(frozen=True)
class GenConfig:
    """All knobs of the synthetic generators."""

    scenario: str
    kind: str = SFT
    n_train: int = 256
    n_holdout: int = 32
    n_test: int = 32
    noise_rate: float = 0.3
    num_domains: int = 1
    target_domain: int = 0
    len_min: int = 4
    len_max: int = 8
    alphabet: str = DEFAULT_ALPHABET

    def __post_init__(self) -> None:
        if self.scenario not in (NOISE, DOMAIN):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.kind not in (SFT, PREF):
            raise ValueError(f"unknown kind {self.kind!r}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError(f"noise_rate must be in [0, 1], got {self.noise_rate}")
        if not 1 <= self.num_domains <= len(TRANSFORMS):
            raise ValueError(f"num_domains must be in [1, {len(TRANSFORMS)}]")
        if not 0 <= self.target_domain < self.num_domains:
            raise ValueError("target_domain must name one of the generated domains")
        if not 1 <= self.len_min <= self.len_max:
            raise ValueError("need 1 <= len_min <= len_max")
        if self.scenario == DOMAIN and self.n_train % self.num_domains != 0:
            raise ValueError("n_train must be divisible by num_domains")
        Alphabet(self.alphabet)


def corruption_count(noise_rate: float, n: int) -> int:
    """Exact floor(noise_rate * n), immune to float representation of the rate."""
    return int(Fraction(str(noise_rate)) * n)


def _rand_string(rng: np.random.Generator, cfg: GenConfig) -> str:
    length = int(rng.integers(cfg.len_min, cfg.len_max + 1))
    ids = rng.integers(0, len(cfg.alphabet), size=length)
    return "".join(cfg.alphabet[i] for i in ids)


def _corrupt_string(rng: np.random.Generator, s: str, alphabet: str) -> str:
    """Substitute a random ceil(len/2) of the characters with different ones."""
    n_sub = math.ceil(len(s) / 2)
    positions = rng.choice(len(s), size=n_sub, replace=False)
    out = list(s)
    for pos in sorted(int(p) for p in positions):
        cur = out[pos]
        others = [c for c in alphabet if c != cur]
        out[pos] = others[int(rng.integers(0, len(others)))]
    return "".join(out)


def _domain_of(cfg: GenConfig, split: str, i: int) -> int:
    if cfg.scenario == NOISE:
        return 0
    if split == "train":
        return i % cfg.num_domains
    return cfg.target_domain


def _gen_prompts(rng: np.random.Generator, cfg: GenConfig) -> dict[str, list[str]]:
    # Draw order is part of the generator contract: train, then holdout, then test.
    return {
        "train": [_rand_string(rng, cfg) for _ in range(cfg.n_train)],
        "holdout": [_rand_string(rng, cfg) for _ in range(cfg.n_holdout)],
        "test": [_rand_string(rng, cfg) for _ in range(cfg.n_test)],
    }


def _flagged_indices(rng: np.random.Generator, cfg: GenConfig) -> set[int]:
    if cfg.scenario != NOISE:
        return set()
    n_bad = corruption_count(cfg.noise_rate, cfg.n_train)
    perm = rng.permutation(cfg.n_train)
    return {int(i) for i in perm[:n_bad]}


def generate_synthetic_sft(cfg: GenConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic (train, holdout, test) SFT datasets for the configured scenario."""
    if cfg.kind != SFT:
        raise ValueError("generate_synthetic_sft requires kind='sft'")
    rng = np.random.default_rng(seed)
    alpha = Alphabet(cfg.alphabet)
    prompts = _gen_prompts(rng, cfg)
    flagged = _flagged_indices(rng, cfg)

    splits: dict[str, Dataset] = {}
    for split in ("train", "holdout", "test"):
        examples = []
        for i, prompt in enumerate(prompts[split]):
            dom = _domain_of(cfg, split, i)
            response = TRANSFORMS[dom](prompt)
            bad = split == "train" and i in flagged
            if bad:
                response = _corrupt_string(rng, response, cfg.alphabet)
            examples.append(
                Example(
                    kind=SFT,
                    prompt=alpha.tokenize(prompt),
                    response=alpha.tokenize(response),
                    domain=dom if cfg.scenario == DOMAIN else None,
                    corrupted=bad,
                )
            )
        splits[split] = Dataset(SFT, examples)
    return splits["train"], splits["holdout"], splits["test"]


def generate_synthetic_pref(cfg: GenConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic preference datasets: chosen = clean transform, rejected = corrupted.

    In the noisy scenario the flagged training pairs are swapped, so their
    chosen field holds the corrupted string.
    """
    if cfg.kind != PREF:
        raise ValueError("generate_synthetic_pref requires kind='pref'")
    rng = np.random.default_rng(seed)
    alpha = Alphabet(cfg.alphabet)
    prompts = _gen_prompts(rng, cfg)
    flagged = _flagged_indices(rng, cfg)

    splits: dict[str, Dataset] = {}
    for split in ("train", "holdout", "test"):
        examples = []
        for i, prompt in enumerate(prompts[split]):
            dom = _domain_of(cfg, split, i)
            clean = TRANSFORMS[dom](prompt)
            bad_variant = _corrupt_string(rng, clean, cfg.alphabet)
            swapped = split == "train" and i in flagged
            chosen, rejected = (bad_variant, clean) if swapped else (clean, bad_variant)
            examples.append(
                Example(
                    kind=PREF,
                    prompt=alpha.tokenize(prompt),
                    chosen=alpha.tokenize(chosen),
                    rejected=alpha.tokenize(rejected),
                    domain=dom if cfg.scenario == DOMAIN else None,
                    corrupted=swapped,
                )
            )
        splits[split] = Dataset(PREF, examples)
    return splits["train"], splits["holdout"], splits["test"]


def generate(cfg: GenConfig, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Dispatch to the SFT or preference generator based on cfg.kind."""
    if cfg.kind == SFT:
        return generate_synthetic_sft(cfg, seed)
    return generate_synthetic_pref(cfg, seed)


_RECORD_FIELDS = {"kind", "prompt", "response", "chosen", "rejected", "domain", "corrupted"}


def _example_to_record(ex: Example, alpha: Alphabet) -> dict:
    rec: dict = {"kind": ex.kind, "prompt": alpha.detokenize(ex.prompt)}
    if ex.kind == SFT:
        rec["response"] = alpha.detokenize(ex.response)
    else:
        rec["chosen"] = alpha.detokenize(ex.chosen)
        rec["rejected"] = alpha.detokenize(ex.rejected)
    if ex.domain is not None:
        rec["domain"] = ex.domain
    if ex.corrupted:
        rec["corrupted"] = True
    return rec


def save_jsonl(dataset: Dataset, path: str | Path, alphabet: Alphabet | None = None) -> None:
    """Write one JSON record per example; field order and bytes are deterministic."""
    alpha = alphabet or Alphabet()
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(json.dumps(_example_to_record(ex, alpha)) + "\n")


def load_jsonl(path: str | Path, alphabet: Alphabet | None = None, kind: str | None = None) -> Dataset:
    """Load a dataset; an empty file yields an empty dataset of the declared kind."""
    alpha = alphabet or Alphabet()
    examples: list[Example] = []
    seen_kind: str | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise DatasetFormatError(f"line {lineno}: record must be an object")
            unknown = set(rec) - _RECORD_FIELDS
            if unknown:
                raise DatasetFormatError(f"line {lineno}: unknown fields {sorted(unknown)}")
            rec_kind = rec.get("kind")
            if rec_kind not in (SFT, PREF):
                raise DatasetFormatError(f"line {lineno}: kind must be 'sft' or 'pref'")
            if seen_kind is None:
                seen_kind = rec_kind
            elif rec_kind != seen_kind:
                raise DatasetFormatError(f"line {lineno}: mixed kinds ({rec_kind!r} after {seen_kind!r})")
            try:
                if rec_kind == SFT:
                    if "response" not in rec:
                        raise DatasetFormatError(f"line {lineno}: SFT record missing 'response'")
                    ex = Example(
                        kind=SFT,
                        prompt=alpha.tokenize(rec["prompt"]),
                        response=alpha.tokenize(rec["response"]),
                        domain=rec.get("domain"),
                        corrupted=bool(rec.get("corrupted", False)),
                    )
                else:
                    if "chosen" not in rec or "rejected" not in rec:
                        raise DatasetFormatError(f"line {lineno}: preference record missing 'chosen'/'rejected'")
                    ex = Example(
                        kind=PREF,
                        prompt=alpha.tokenize(rec["prompt"]),
                        chosen=alpha.tokenize(rec["chosen"]),
                        rejected=alpha.tokenize(rec["rejected"]),
                        domain=rec.get("domain"),
                        corrupted=bool(rec.get("corrupted", False)),
                    )
            except (TokenizeError, ValueError, KeyError, TypeError) as exc:
                if isinstance(exc, DatasetFormatError):
                    raise
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
            examples.append(ex)
    if seen_kind is None:
        if kind is None:
            kind = SFT
        seen_kind = kind
    return Dataset(seen_kind, examples)

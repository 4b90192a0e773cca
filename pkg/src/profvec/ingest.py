"""Profile records: loading, validation, image-tag enrichment and synthesis.

Profiles live in a line-delimited JSON file, one object per line::

    {"id": "u1", "label": "gang", "description": "...", "tweets": ["..."],
     "image_tags": ["trigger"], "video_text": ["..."]}

``label`` is ``"gang"``, ``"non_gang"`` or ``null`` (unlabeled). Only ``id``
and ``label`` are mandatory; missing channels read as empty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .seeding import derive_seed

MAX_TWEETS = 3200


class Label(str, Enum):
    GANG = "gang"
    NON_GANG = "non_gang"
    UNLABELED = "unlabeled"

    @classmethod
    def parse(cls, value) -> "Label":
        if value is None:
            return cls.UNLABELED
        try:
            return cls(value)
        except ValueError:
            raise ValidationError(f"invalid label {value!r}") from None

    def serialize(self):
        return None if self is Label.UNLABELED else self.value


@dataclass(frozen=True)
class ProfileRecord:
    id: str
    label: Label
    description: str = ""
    tweets: tuple[str, ...] = ()
    image_tags: tuple[str, ...] = ()
    video_text: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id.strip():
            raise ValidationError("profile id must be a non-empty string")
        if not isinstance(self.label, Label):
            raise ValidationError(f"invalid label {self.label!r}")
        if len(self.tweets) > MAX_TWEETS:
            raise ValidationError(
                f"profile {self.id!r} has {len(self.tweets)} tweets (max {MAX_TWEETS})"
            )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label.serialize(),
            "description": self.description,
            "tweets": list(self.tweets),
            "image_tags": list(self.image_tags),
            "video_text": list(self.video_text),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ProfileRecord":
        if not isinstance(obj, Mapping):
            raise ValidationError("record must be a JSON object")
        if "id" not in obj:
            raise ValidationError("missing field 'id'")
        if "label" not in obj:
            raise ValidationError("missing field 'label'")
        description = obj.get("description") or ""
        if not isinstance(description, str):
            raise ValidationError("'description' must be a string")
        return cls(
            id=obj["id"],
            label=Label.parse(obj["label"]),
            description=description,
            tweets=_str_tuple(obj, "tweets"),
            image_tags=_str_tuple(obj, "image_tags"),
            video_text=_str_tuple(obj, "video_text"),
        )


def _str_tuple(obj, key) -> tuple[str, ...]:
    value = obj.get(key)
    if value is None:
        return ()
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValidationError(f"{key!r} must be a list of strings")
    return tuple(value)


@dataclass(frozen=True)
class ProfileCollection:
    records: tuple[ProfileRecord, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for pos, rec in enumerate(self.records):
            if rec.id in index:
                raise ValidationError(f"duplicate profile id {rec.id!r}")
            index[rec.id] = pos
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, profile_id: str) -> ProfileRecord:
        return self.records[self._index[profile_id]]

    def __contains__(self, profile_id) -> bool:
        return profile_id in self._index

    @property
    def counts(self) -> tuple[int, int, int]:
        """(gang, non_gang, unlabeled) tally."""
        tally = {label: 0 for label in Label}
        for rec in self.records:
            tally[rec.label] += 1
        return tally[Label.GANG], tally[Label.NON_GANG], tally[Label.UNLABELED]

    def labeled(self) -> "ProfileCollection":
        return ProfileCollection(tuple(r for r in self.records if r.label is not Label.UNLABELED))


def load_profiles(path) -> ProfileCollection:
    path = Path(path)
    try:
        handle = path.open("r", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read profiles file {path}: {exc.strerror}") from exc
    records = []
    seen = set()
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            try:
                rec = ProfileRecord.from_dict(obj)
            except ValidationError as exc:
                raise ParseError(str(exc), path, lineno) from None
            if rec.id in seen:
                raise ValidationError(f"duplicate profile id {rec.id!r} ({path}:{lineno})")
            seen.add(rec.id)
            records.append(rec)
    return ProfileCollection(tuple(records))


def dumps_profile(rec: ProfileRecord) -> str:
    return json.dumps(rec.to_dict(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def write_profiles(profiles: Iterable[ProfileRecord], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as out:
        for rec in profiles:
            out.write(dumps_profile(rec))
            out.write("\n")


# --- image tags -------------------------------------------------------------

TagSource = Mapping[str, Sequence[str]]


def load_tags(path) -> dict[str, tuple[str, ...]]:
    """Read ``{"id": ..., "tags": [...]}`` lines; repeated ids are merged."""
    path = Path(path)
    merged: dict[str, list[str]] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict) or "id" not in obj or "tags" not in obj:
                raise ParseError("tag record needs 'id' and 'tags'", path, lineno)
            tags = obj["tags"]
            if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
                raise ParseError("'tags' must be a list of strings", path, lineno)
            cleaned = [t.strip() for t in tags]
            if any(not t for t in cleaned):
                raise ParseError("empty image tag", path, lineno)
            merged.setdefault(str(obj["id"]), []).extend(cleaned)
    return {pid: tuple(tags) for pid, tags in merged.items()}


def _ordered_union(*seqs: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(t for seq in seqs for t in seq))


def attach_image_tags(profiles: ProfileCollection, tags: TagSource) -> ProfileCollection:
    out = []
    for rec in profiles:
        extra = tags.get(rec.id)
        if extra is None:
            out.append(rec)
            continue
        cleaned = [t.strip() for t in extra if t.strip()]
        out.append(replace(rec, image_tags=_ordered_union(rec.image_tags, cleaned)))
    return ProfileCollection(tuple(out))


# --- synthetic collections --------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    n_pos: int
    n_neg: int
    vocab_pos: tuple[str, ...]
    vocab_neg: tuple[str, ...]
    vocab_shared: tuple[str, ...]
    tweets_per_profile: tuple[int, int] = (2, 6)
    tokens_per_tweet: tuple[int, int] = (4, 10)
    seed: int = 0
    # probability that a token comes from the class inventory rather than the shared one
    signal_rate: float = 0.5
    emoji_pos: tuple[str, ...] = ()
    emoji_neg: tuple[str, ...] = ()
    # probability that each optional channel (description, image tags, video) is present
    channel_rate: float = 0.7

    def __post_init__(self):
        for name in ("vocab_pos", "vocab_neg", "vocab_shared", "emoji_pos", "emoji_neg",
                     "tweets_per_profile", "tokens_per_tweet"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.n_pos < 1 or self.n_neg < 1:
            raise ValidationError("n_pos and n_neg must be positive")
        if not self.vocab_pos or not self.vocab_neg or not self.vocab_shared:
            raise ValidationError("token inventories must be non-empty")
        for name in ("tweets_per_profile", "tokens_per_tweet"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValidationError(f"{name} must be a non-empty positive range, got {(lo, hi)}")
        if set(self.vocab_pos) & set(self.vocab_neg):
            raise ValidationError("vocab_pos and vocab_neg overlap; planted signal would be ambiguous")
        if set(self.emoji_pos) & set(self.emoji_neg):
            raise ValidationError("emoji_pos and emoji_neg overlap")
        if not 0.0 < self.signal_rate <= 1.0 or not 0.0 <= self.channel_rate <= 1.0:
            raise ValidationError("signal_rate must be in (0, 1] and channel_rate in [0, 1]")

    def swapped(self) -> "SynthSpec":
        return replace(self, n_pos=self.n_neg, n_neg=self.n_pos,
                       vocab_pos=self.vocab_neg, vocab_neg=self.vocab_pos,
                       emoji_pos=self.emoji_neg, emoji_neg=self.emoji_pos)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown synth spec keys: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ValidationError(str(exc)) from None

    def to_dict(self) -> dict:
        return {name: (list(v) if isinstance(v, tuple) else v)
                for name, v in ((f, getattr(self, f)) for f in self.__dataclass_fields__)}


def _synth_text(rng, n_tokens, own, shared, signal_rate, emoji, force_own):
    words = []
    for j in range(n_tokens):
        if (force_own and j == 0) or rng.random() < signal_rate:
            words.append(own[rng.integers(len(own))])
        else:
            words.append(shared[rng.integers(len(shared))])
    if emoji and rng.random() < 0.3:
        words.append(emoji[rng.integers(len(emoji))])
    return " ".join(words)


def _synth_profile(spec: SynthSpec, rng, own, emoji, pid, label):
    lo, hi = spec.tweets_per_profile
    tlo, thi = spec.tokens_per_tweet
    n_tweets = int(rng.integers(lo, hi + 1))
    tweets = tuple(
        _synth_text(rng, int(rng.integers(tlo, thi + 1)), own, spec.vocab_shared,
                    spec.signal_rate, emoji, force_own=(i == 0))
        for i in range(n_tweets)
    )
    description = ""
    if rng.random() < spec.channel_rate:
        description = _synth_text(rng, int(rng.integers(tlo, thi + 1)), own,
                                  spec.vocab_shared, spec.signal_rate, emoji, False)
    image_tags: tuple[str, ...] = ()
    if rng.random() < spec.channel_rate:
        image_tags = _ordered_union(
            [own[rng.integers(len(own))] if rng.random() < spec.signal_rate
             else spec.vocab_shared[rng.integers(len(spec.vocab_shared))]
             for _ in range(int(rng.integers(1, 4)))]
        )
    video_text: tuple[str, ...] = ()
    if rng.random() < spec.channel_rate:
        video_text = (_synth_text(rng, int(rng.integers(tlo, thi + 1)), own,
                                  spec.vocab_shared, spec.signal_rate, (), False),)
    return ProfileRecord(id=pid, label=label, description=description, tweets=tweets,
                         image_tags=image_tags, video_text=video_text)


def synthesize_profiles(spec: SynthSpec) -> ProfileCollection:
    """Generate a labeled collection with a planted vocabulary signal.

    The j-th profile of either class is drawn from a stream keyed only on
    ``(seed, j)``, so swapping the class sizes and inventories mirrors the
    collection exactly.
    """
    records = []
    roles = ((spec.n_pos, spec.vocab_pos, spec.emoji_pos, Label.GANG),
             (spec.n_neg, spec.vocab_neg, spec.emoji_neg, Label.NON_GANG))
    for n, own, emoji, label in roles:
        for j in range(n):
            rng = np.random.default_rng(derive_seed(spec.seed, f"synth/{j}"))
            pid = f"{label.value}-{j:05d}"
            records.append(_synth_profile(spec, rng, own, emoji, pid, label))
    return ProfileCollection(tuple(records))


DEMO_VOCAB_POS = (
    "gdk", "bdk", "opp", "drill", "glock", "blick", "strap", "hood", "ops", "smoke",
    "block", "trap", "opps", "shooter", "pistol", "ridin", "lick", "sett", "trey", "foenem",
)
DEMO_VOCAB_NEG = (
    "coffee", "soccer", "brunch", "study", "concert", "movie", "garden", "church", "yoga",
    "travel", "beach", "recipe", "puppy", "coding", "library", "museum", "hiking", "novel",
    "bakery", "campus",
)
DEMO_VOCAB_SHARED = (
    "love", "life", "today", "good", "time", "day", "real", "happy", "night", "home",
    "friend", "family", "work", "music", "game", "school", "money", "people", "city", "weekend",
    "morning", "best", "new", "lol", "fun", "song", "like", "post", "watch", "team",
)


def demo_synth_spec(seed: int = 7, n_pos: int = 60, n_neg: int = 440) -> SynthSpec:
    return SynthSpec(
        n_pos=n_pos, n_neg=n_neg,
        vocab_pos=DEMO_VOCAB_POS, vocab_neg=DEMO_VOCAB_NEG, vocab_shared=DEMO_VOCAB_SHARED,
        tweets_per_profile=(3, 8), tokens_per_tweet=(4, 10), seed=seed,
        signal_rate=0.25, emoji_pos=("\U0001F52B", "\U0001F4AF"), emoji_neg=("☀",),
    )

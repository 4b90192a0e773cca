"""Raw channel text to normalized token sequences.

Per channel the pipeline is: emoji extraction -> tokenization -> seed-word
removal -> stopword removal -> stemming. Seed words and stopwords are matched
on the lowercased surface form, before stemming.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

from nltk.stem.porter import PorterStemmer

from .errors import ParseError, ValidationError
from .ingest import Label, ProfileRecord

CHANNELS = ("tweets", "description", "emoji", "image_tags", "video_text")

_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_TOKEN_RE = re.compile(r"[a-z0-9_]+")
_VARIATION_SELECTORS = "\ufe0e\ufe0f"


def read_token_file(path) -> frozenset[str]:
    """One token per line; blank lines and '#' comments are skipped."""
    tokens = set()
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.add(line.lower())
    return frozenset(tokens)


def read_emoji_aliases(path) -> dict[str, str]:
    aliases = {}
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or not _TOKEN_RE.fullmatch(parts[1]):
                raise ParseError("expected '<emoji> <alias_token>'", path, lineno)
            aliases[parts[0].strip(_VARIATION_SELECTORS)] = parts[1]
    return aliases


def _packaged(name: str):
    return resources.files("profvec").joinpath("data", name)


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    with resources.as_file(_packaged("stopwords.txt")) as path:
        return read_token_file(path)


@lru_cache(maxsize=None)
def _default_emoji_items() -> tuple[tuple[str, str], ...]:
    with resources.as_file(_packaged("emoji_aliases.txt")) as path:
        return tuple(read_emoji_aliases(path).items())


def default_emoji_aliases() -> dict[str, str]:
    return dict(_default_emoji_items())


@dataclass(frozen=True)
class PreprocessConfig:
    stopwords: frozenset[str] = field(default_factory=default_stopwords)
    seed_words: frozenset[str] = frozenset()
    stem: bool = True
    emoji_alias: Mapping[str, str] = field(default_factory=default_emoji_aliases)

    def __post_init__(self):
        object.__setattr__(self, "stopwords", frozenset(w.lower() for w in self.stopwords))
        object.__setattr__(self, "seed_words", frozenset(w.lower() for w in self.seed_words))

    def __hash__(self):
        return hash((self.stopwords, self.seed_words, self.stem,
                     tuple(sorted(self.emoji_alias.items()))))

    @classmethod
    def from_file(cls, path) -> "PreprocessConfig":
        """JSON object with optional keys ``stopwords``, ``seed_words``,
        ``emoji_aliases`` (file paths, relative to the config file) and ``stem``."""
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", path, exc.lineno) from None
        if not isinstance(obj, dict):
            raise ValidationError(f"{path}: preprocess config must be a JSON object")
        unknown = set(obj) - {"stopwords", "seed_words", "emoji_aliases", "stem"}
        if unknown:
            raise ValidationError(f"{path}: unknown preprocess config keys {sorted(unknown)}")
        base = path.parent
        kwargs = {}
        if obj.get("stopwords"):
            kwargs["stopwords"] = read_token_file(base / obj["stopwords"])
        if obj.get("seed_words"):
            kwargs["seed_words"] = read_token_file(base / obj["seed_words"])
        if obj.get("emoji_aliases"):
            kwargs["emoji_alias"] = read_emoji_aliases(base / obj["emoji_aliases"])
        if "stem" in obj:
            kwargs["stem"] = bool(obj["stem"])
        return cls(**kwargs)


@lru_cache(maxsize=64)
def _emoji_pattern(items: tuple[str, ...]):
    if not items:
        return None
    # longest first so multi-codepoint sequences win over their prefixes
    alternatives = "|".join(re.escape(e) for e in sorted(items, key=len, reverse=True))
    return re.compile(f"(?:{alternatives})[{_VARIATION_SELECTORS}]?")


def extract_emoji(text: str, emoji_alias: Mapping[str, str]) -> tuple[str, list[str]]:
    pattern = _emoji_pattern(tuple(sorted(emoji_alias)))
    if pattern is None:
        return text, []
    found = []
    pieces = []
    last = 0
    for match in pattern.finditer(text):
        found.append(emoji_alias[match.group(0).rstrip(_VARIATION_SELECTORS)])
        pieces.append(text[last:match.start()])
        last = match.end()
        # keep words on either side of an emoji from fusing
        if pieces[-1][-1:].isalnum() and text[last:last + 1].isalnum():
            pieces.append(" ")
    pieces.append(text[last:])
    return "".join(pieces), found


def tokenize(text: str) -> list[str]:
    text = _URL_RE.sub(" ", text)
    text = _MENTION_RE.sub(" ", text)
    return _TOKEN_RE.findall(text.lower())


_porter = PorterStemmer()


@lru_cache(maxsize=200_000)
def stem(token: str) -> str:
    # Porter is not idempotent on every word (agree -> agre -> agr); iterate to a fixed point
    current = token
    while True:
        nxt = _porter.stem(current, to_lowercase=False)
        if nxt == current or not nxt:
            return current
        current = nxt


@dataclass(frozen=True)
class TokenizedProfile:
    id: str
    label: Label
    channel_tokens: Mapping[str, tuple[str, ...]]

    @property
    def merged_tokens(self) -> tuple[str, ...]:
        return tuple(tok for ch in CHANNELS for tok in self.channel_tokens.get(ch, ()))

    def has_all_channels(self) -> bool:
        return all(self.channel_tokens.get(ch) for ch in CHANNELS)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label.serialize(),
            "channels": {ch: list(self.channel_tokens.get(ch, ())) for ch in CHANNELS},
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TokenizedProfile":
        if not isinstance(obj, Mapping) or "id" not in obj or "label" not in obj:
            raise ValidationError("tokenized profile needs 'id' and 'label'")
        channels = obj.get("channels") or {}
        unknown = set(channels) - set(CHANNELS)
        if unknown:
            raise ValidationError(f"unknown channels {sorted(unknown)}")
        tokens = {}
        for ch in CHANNELS:
            seq = channels.get(ch, [])
            if not isinstance(seq, list) or not all(
                isinstance(t, str) and _TOKEN_RE.fullmatch(t) for t in seq
            ):
                raise ValidationError(f"channel {ch!r} must be a list of [a-z0-9_]+ tokens")
            tokens[ch] = tuple(seq)
        pid = obj["id"]
        if not isinstance(pid, str) or not pid:
            raise ValidationError("profile id must be a non-empty string")
        return cls(id=pid, label=Label.parse(obj["label"]), channel_tokens=tokens)


def _filter_tokens(tokens: Iterable[str], config: PreprocessConfig) -> list[str]:
    kept = [t for t in tokens if t not in config.seed_words and t not in config.stopwords]
    if config.stem:
        kept = [stem(t) for t in kept]
    return kept


def _text_channel(texts: Iterable[str], config: PreprocessConfig, emoji_sink: list[str] | None):
    out = []
    for text in texts:
        if emoji_sink is not None:
            text, found = extract_emoji(text, config.emoji_alias)
            emoji_sink.extend(found)
        out.extend(_filter_tokens(tokenize(text), config))
    return tuple(out)


def preprocess_profile(record: ProfileRecord, config: PreprocessConfig) -> TokenizedProfile:
    """Emoji found in tweets, the description and video text populate the
    ``emoji`` channel (in that order) as alias tokens; aliases are neither
    filtered nor stemmed so each emoji stays one vocabulary entry."""
    emoji: list[str] = []
    tweets = _text_channel(record.tweets, config, emoji)
    description = _text_channel([record.description], config, emoji)
    video = _text_channel(record.video_text, config, emoji)
    image_tags = _text_channel(record.image_tags, config, None)
    return TokenizedProfile(
        id=record.id,
        label=record.label,
        channel_tokens={
            "tweets": tweets,
            "description": description,
            "emoji": tuple(emoji),
            "image_tags": image_tags,
            "video_text": video,
        },
    )


def preprocess_collection(records: Iterable[ProfileRecord], config: PreprocessConfig):
    return [preprocess_profile(r, config) for r in records]


def load_tokenized(path) -> list[TokenizedProfile]:
    path = Path(path)
    out = []
    seen = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                prof = TokenizedProfile.from_dict(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            except ValidationError as exc:
                raise ParseError(str(exc), path, lineno) from None
            if prof.id in seen:
                raise ValidationError(f"duplicate profile id {prof.id!r} ({path}:{lineno})")
            seen.add(prof.id)
            out.append(prof)
    return out


def write_tokenized(profiles: Iterable[TokenizedProfile], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as out:
        for prof in profiles:
            out.write(json.dumps(prof.to_dict(), sort_keys=True, separators=(",", ":")))
            out.write("\n")

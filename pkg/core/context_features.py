"""
App-level context features for the user-intention classifiers
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from nltk.stem.porter import PorterStemmer
from nltk.tokenize import RegexpTokenizer

from core.flow_features import SparseFeatureVector
from utils.config import DEFAULT_TOPIC_CONFIG
from utils.errors import DataError, SchemaError
from utils.logger import get_logger
from utils.validators import validate_instance_id

logger = get_logger(__name__)

TOPIC_CONFIG_SCHEMA = 1
STEMMER_ID = "nltk-porter/NLTK_EXTENSIONS"
CITY_CLICKABLE = "city-clickable"
MIN_SEGMENT_LENGTH = 3

_tokenizer = RegexpTokenizer(r"[^\W_]+")
_stemmer = PorterStemmer()
_CAMEL_RE = re.compile(r'[A-Z]+(?![a-z])|[A-Z]?[a-z]+|[0-9]+')


@dataclass(frozen=True)
class AppContext:
    """One running instance: static app metadata plus the visible window"""
    instance_id: str
    app_name: str
    description: str
    market_category: str
    ui_texts: Tuple[str, ...] = ()
    clickable_labels: Tuple[str, ...] = ()

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> AppContext:
        instance_id = str(record.get("instance_id", ""))
        is_valid, error = validate_instance_id(instance_id)
        if not is_valid:
            raise DataError(error)
        category = str(record.get("market_category", "")).strip()
        if not category:
            raise DataError(f"Context {instance_id} has no market_category")
        return cls(
            instance_id=instance_id,
            app_name=str(record.get("app_name", "")),
            description=str(record.get("description", "")),
            market_category=category,
            ui_texts=tuple(record.get("ui_texts", ())),
            clickable_labels=tuple(record.get("clickable_labels", ())),
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "app_name": self.app_name,
            "description": self.description,
            "market_category": self.market_category,
            "ui_texts": list(self.ui_texts),
            "clickable_labels": list(self.clickable_labels),
        }


@dataclass(frozen=True)
class TopicConfig:
    """Topic keyword sets (pre-stemmed), city gazetteer, app-name word list and stop words"""
    topics: Mapping[str, FrozenSet[str]]
    city_names: FrozenSet[str]
    name_wordlist: Tuple[str, ...]
    stopwords: FrozenSet[str] = frozenset()
    stemmer: str = STEMMER_ID
    schema_version: int = TOPIC_CONFIG_SCHEMA
    _name_lookup: FrozenSet[str] = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self):
        for name, keywords in self.topics.items():
            if not name or not keywords:
                raise DataError(f"Topic {name!r} must have a name and a nonempty keyword set")
        object.__setattr__(self, "_name_lookup", frozenset(w.lower() for w in self.name_wordlist))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TopicConfig:
        if data.get("schema_version") != TOPIC_CONFIG_SCHEMA:
            raise SchemaError(f"Topic config schema {data.get('schema_version')!r} is not {TOPIC_CONFIG_SCHEMA}")
        if data.get("stemmer", STEMMER_ID) != STEMMER_ID:
            raise SchemaError(f"Topic config was built for stemmer {data.get('stemmer')!r}, not {STEMMER_ID}")
        topics = data.get("topics") or {}
        if len(set(topics)) != len(topics):
            raise DataError("Topic names must be unique")
        return cls(
            topics={name: frozenset(k.lower() for k in keywords) for name, keywords in topics.items()},
            city_names=frozenset(c.strip().lower() for c in data.get("city_names", [])),
            name_wordlist=tuple(w.lower() for w in data.get("name_wordlist", [])),
            stopwords=frozenset(w.lower() for w in data.get("stopwords", [])),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "stemmer": self.stemmer,
            "topics": {name: sorted(keywords) for name, keywords in sorted(self.topics.items())},
            "city_names": sorted(self.city_names),
            "name_wordlist": list(self.name_wordlist),
            "stopwords": sorted(self.stopwords),
        }

    def digest(self) -> str:
        """Content digest recorded in model bundles"""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def has_name_word(self, word: str) -> bool:
        return word in self._name_lookup


def load_topic_config(path: Path) -> TopicConfig:
    """Load a TopicConfig JSON file"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Topic config not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid topic config: {e}")
    config = TopicConfig.from_dict(data)
    logger.info(
        f"Loaded topic config {path}: {len(config.topics)} topics, "
        f"{len(config.city_names)} cities, {len(config.name_wordlist)} name words"
    )
    return config


@lru_cache(maxsize=1)
def default_stopwords() -> FrozenSet[str]:
    """Stop words of the shipped topic config"""
    return load_topic_config(DEFAULT_TOPIC_CONFIG).stopwords


def preprocess_text(text: str, stopwords: Optional[Iterable[str]] = None) -> List[str]:
    """
    Tokenize, lowercase, drop stop words and stem

    Tokens outside ASCII are kept unstemmed.

    Args:
        text: Free text
        stopwords: Words to remove (lowercase); the shipped list when omitted

    Returns:
        Stemmed tokens in input order
    """
    if stopwords is None:
        stopwords = default_stopwords()
    stopwords = stopwords if isinstance(stopwords, (set, frozenset)) else frozenset(stopwords)
    tokens = []
    for token in _tokenizer.tokenize(text.lower()):
        if token in stopwords:
            continue
        tokens.append(_stemmer.stem(token) if token.isascii() else token)
    return tokens


def assign_topic(tokens: Iterable[str], config: TopicConfig, fallback: str) -> str:
    """
    Topic hit by the most distinct keywords

    Ties go to the lexicographically smallest topic name; no hits fall
    back to the market category.

    Args:
        tokens: Stemmed tokens
        config: Topic configuration
        fallback: Market category

    Returns:
        Topic name, or "market:<category>"
    """
    distinct = set(tokens)
    best_name, best_hits = None, 0
    for name in sorted(config.topics):
        hits = len(config.topics[name] & distinct)
        if hits > best_hits:
            best_name, best_hits = name, hits
    if best_name is None:
        return f"market:{fallback}"
    return best_name


def _segment(run: str, config: TopicConfig) -> List[str]:
    """Greedy longest-match segmentation of an undelimited lowercase run"""
    words = []
    position = 0
    while position < len(run):
        match = None
        for end in range(len(run), position + MIN_SEGMENT_LENGTH - 1, -1):
            if config.has_name_word(run[position:end]):
                match = run[position:end]
                break
        if match:
            words.append(match)
            position += len(match)
        else:
            position += 1
    return words


def name_features(app_name: str, config: TopicConfig) -> SparseFeatureVector:
    """
    Word-list features found in an app name

    Camel-case and delimiter parts are matched exactly; each delimiter-free
    run is also segmented greedily against the word list.

    Args:
        app_name: App display name
        config: Topic configuration holding the name word list

    Returns:
        name:<word> binary features
    """
    found = set()
    for part in _CAMEL_RE.findall(app_name):
        if config.has_name_word(part.lower()):
            found.add(part.lower())
    for run in re.split(r'[^0-9a-z]+', app_name.lower()):
        found.update(_segment(run, config))
    return SparseFeatureVector.binary(f"name:{w}" for w in sorted(found))


def ui_features(context: AppContext, config: TopicConfig) -> SparseFeatureVector:
    """
    Bag-of-words over the window text plus the city-clickable flag

    Args:
        context: Running-instance context
        config: Topic configuration (stop words, city gazetteer)

    Returns:
        ui:<token> binary features, city-clickable when a clickable label is a city
    """
    names = set()
    for text in context.ui_texts:
        names.update(f"ui:{t}" for t in preprocess_text(text, config.stopwords))
    if any(label.strip().lower() in config.city_names for label in context.clickable_labels):
        names.add(CITY_CLICKABLE)
    return SparseFeatureVector.binary(sorted(names))


def context_topic(context: AppContext, config: TopicConfig) -> str:
    """Topic of an app from its description; name words count as extra hits"""
    tokens = preprocess_text(context.description, config.stopwords)
    tokens.extend(preprocess_text(" ".join(_CAMEL_RE.findall(context.app_name)), config.stopwords))
    return assign_topic(tokens, config, context.market_category)


def context_vector(context: AppContext, config: TopicConfig) -> SparseFeatureVector:
    """Topic one-hot, name words and UI features of one running instance"""
    topic = SparseFeatureVector.binary([f"topic:{context_topic(context, config)}"])
    return topic.union(name_features(context.app_name, config)).union(ui_features(context, config))


def load_contexts(records: Iterable[Mapping[str, Any]]) -> List[AppContext]:
    """Parse context records, enforcing unique instance ids"""
    contexts = []
    seen = set()
    for record in records:
        context = AppContext.from_record(record)
        if context.instance_id in seen:
            raise DataError(f"Duplicate instance_id {context.instance_id}")
        seen.add(context.instance_id)
        contexts.append(context)
    return contexts


def topic_config_summary(config: TopicConfig, contexts: Optional[Iterable[AppContext]] = None) -> Dict[str, Any]:
    """Vocabulary counts reported alongside trained context models"""
    summary: Dict[str, Any] = {
        "topics": len(config.topics),
        "name_words": len(config.name_wordlist),
        "cities": len(config.city_names),
    }
    if contexts is not None:
        ui_vocab = set()
        for context in contexts:
            ui_vocab.update(n for n in ui_features(context, config) if n.startswith("ui:"))
        summary["ui_vocabulary"] = len(ui_vocab)
    return summary

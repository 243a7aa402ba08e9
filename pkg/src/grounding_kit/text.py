"""Global-local textual features.

The global feature encodes the whole referring expression; the local
feature encodes the target noun phrase: the noun chunk containing the
dependency root (or, for verb roots, the root's first noun child in
sentence order), falling back to the whole sentence when no chunk
contains it. Parse trees are a plain input format decoupled from any
specific parser; a thin adapter converts spaCy output and fixtures are
bundled for deterministic tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .core import Expression, fuse
from .encoders import TextEncoder
from .errors import MalformedParse, SchemaError

NOUN = "NOUN"
VERB = "VERB"


@dataclass(frozen=True)
class ParseToken:
    index: int
    text: str
    pos: str
    head: int
    dep: str


@dataclass(frozen=True)
class ParseTree:
    """Tokenized expression with head links, coarse POS tags, and
    non-overlapping noun-chunk spans (end exclusive)."""

    tokens: tuple[ParseToken, ...]
    chunks: tuple[tuple[int, int], ...]

    def __post_init__(self):
        tokens = tuple(self.tokens)
        chunks = tuple((int(a), int(b)) for a, b in self.chunks)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "chunks", chunks)
        n = len(tokens)
        if n == 0:
            raise MalformedParse("parse tree has no tokens")
        roots = [t.index for t in tokens if t.head == t.index]
        if len(roots) != 1:
            raise MalformedParse(f"expected exactly one root, found {len(roots)}")
        for slot, t in enumerate(tokens):
            if t.index != slot:
                raise MalformedParse(f"token at slot {slot} carries index {t.index}")
            if not (0 <= t.head < n):
                raise MalformedParse(f"token {t.index} has head {t.head} out of range")
        # every head chain must terminate at the root
        for t in tokens:
            seen = set()
            cur = t.index
            while tokens[cur].head != cur:
                if cur in seen:
                    raise MalformedParse(f"cyclic head chain through token {t.index}")
                seen.add(cur)
                cur = tokens[cur].head
        prev_end = 0
        for start, end in sorted(chunks):
            if not (0 <= start < end <= n):
                raise MalformedParse(f"chunk span ({start}, {end}) out of bounds")
            if start < prev_end:
                raise MalformedParse(f"chunk span ({start}, {end}) overlaps a previous chunk")
            prev_end = end

    @property
    def root(self) -> ParseToken:
        for t in self.tokens:
            if t.head == t.index:
                return t
        raise MalformedParse("parse tree has no root")  # unreachable after validation


@dataclass(frozen=True)
class NounPhrase:
    """The target noun phrase of an expression; ``is_whole_sentence``
    marks the fallback when no chunk contains the root."""

    text: str
    span: tuple[int, int]
    is_whole_sentence: bool = False

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("noun phrase text must be non-empty")


def parse_tree_from_json(obj: dict) -> ParseTree:
    """Build a ParseTree from the bit-exact wire format:
    ``{"tokens": [{"i", "text", "pos", "head", "dep"}], "chunks": [[start, end]]}``.
    """
    try:
        tokens = tuple(
            ParseToken(
                index=int(t["i"]),
                text=str(t["text"]),
                pos=str(t["pos"]),
                head=int(t["head"]),
                dep=str(t["dep"]),
            )
            for t in obj["tokens"]
        )
        chunks = tuple((int(c[0]), int(c[1])) for c in obj.get("chunks", []))
    except (KeyError, TypeError, IndexError) as e:
        raise MalformedParse(f"bad parse tree object: {e}") from e
    return ParseTree(tokens=tokens, chunks=chunks)


def parse_tree_to_json(tree: ParseTree) -> dict:
    return {
        "tokens": [
            {"i": t.index, "text": t.text, "pos": t.pos, "head": t.head, "dep": t.dep}
            for t in tree.tokens
        ],
        "chunks": [[a, b] for a, b in tree.chunks],
    }


def parse_tree_from_spacy(doc) -> ParseTree:
    """Thin adapter from a spaCy ``Doc``. Proper nouns count as nouns;
    auxiliaries count as verbs; other tags pass through."""
    pos_map = {"PROPN": NOUN, "AUX": VERB}
    tokens = tuple(
        ParseToken(
            index=t.i,
            text=t.text,
            pos=pos_map.get(t.pos_, t.pos_),
            head=t.head.i,
            dep=t.dep_,
        )
        for t in doc
    )
    chunks = tuple((c.start, c.end) for c in doc.noun_chunks)
    return ParseTree(tokens=tokens, chunks=chunks)


def _token_char_spans(tree: ParseTree, text: str) -> list[tuple[int, int]] | None:
    """Greedy left-to-right alignment of token texts into the original
    string; None when any token cannot be located."""
    spans = []
    pos = 0
    for t in tree.tokens:
        found = text.find(t.text, pos)
        if found < 0:
            return None
        spans.append((found, found + len(t.text)))
        pos = found + len(t.text)
    return spans


def _span_text(tree: ParseTree, span: tuple[int, int], original: Expression) -> str:
    char_spans = _token_char_spans(tree, original.text)
    if char_spans is not None:
        return original.text[char_spans[span[0]][0] : char_spans[span[1] - 1][1]]
    return " ".join(t.text for t in tree.tokens[span[0] : span[1]])


def extract_target_np(p: ParseTree, original: Expression) -> NounPhrase:
    """Select the target noun phrase of an expression.

    The root token anchors the choice; a verb root is replaced by its
    first noun child in sentence order. The noun chunk containing the
    anchor wins; with no such chunk the whole sentence is the target.
    """
    root = p.root
    anchor = root.index
    if root.pos == VERB:
        for t in p.tokens:
            if t.head == anchor and t.index != anchor and t.pos == NOUN:
                anchor = t.index
                break
    for start, end in p.chunks:
        if start <= anchor < end:
            return NounPhrase(
                text=_span_text(p, (start, end), original),
                span=(start, end),
                is_whole_sentence=False,
            )
    return NounPhrase(
        text=original.text, span=(0, len(p.tokens)), is_whole_sentence=True
    )


def global_text_feature(h: TextEncoder, T: Expression) -> np.ndarray:
    """Sentence-level feature of the full expression."""
    return h.encode_text(T.text)


def local_text_feature(h: TextEncoder, np_phrase: NounPhrase) -> np.ndarray:
    """Feature of the target noun phrase."""
    return h.encode_text(np_phrase.text)


def global_local_text_feature(
    h: TextEncoder, T: Expression, p: ParseTree | None, beta: float
) -> np.ndarray:
    """Weighted fusion of sentence and noun-phrase features.

    When the target noun phrase is the whole sentence (or no parse is
    available) the result is the global feature itself, exactly: the
    fusion is skipped rather than computed, so no floating-point
    round-off can separate the two.
    """
    t_global = global_text_feature(h, T)
    if p is None:
        return t_global
    np_phrase = extract_target_np(p, T)
    if np_phrase.is_whole_sentence or np_phrase.text == T.text:
        return t_global
    t_local = local_text_feature(h, np_phrase)
    return fuse(t_global, t_local, beta)


def load_parses(path: str) -> dict[str, ParseTree]:
    """Load a parse file ``{"parses": [{"expression", "tree"}]}`` into a
    map keyed by the exact expression string."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise SchemaError("parse file not found", path=path) from None
    except json.JSONDecodeError as e:
        raise SchemaError(f"invalid JSON: {e}", path=path) from e
    if not isinstance(doc, dict) or "parses" not in doc:
        raise SchemaError("parse file needs a top-level 'parses' list", path=path, key="parses")
    out: dict[str, ParseTree] = {}
    for i, row in enumerate(doc["parses"]):
        if "expression" not in row or "tree" not in row:
            raise SchemaError(f"parses[{i}] needs 'expression' and 'tree'", path=path)
        try:
            out[str(row["expression"])] = parse_tree_from_json(row["tree"])
        except MalformedParse as e:
            raise MalformedParse(f"parses[{i}] ({row.get('expression')!r}): {e}") from e
    return out


def fixture_parses_path() -> str:
    """Path of the bundled demonstration parse fixtures."""
    return str(resources.files("grounding_kit").joinpath("data/np_fixture_parses.json"))

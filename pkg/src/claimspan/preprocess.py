"""Text normalization, tokenization, and BIO codecs for span-annotated posts.

Offsets are always character offsets into the text they were produced from.
Normalization edits (URL / junk-token removal) are tracked through an
``OffsetMap`` so gold spans survive the rewrite.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

TAG_B = "B"
TAG_I = "I"
TAG_O = "O"
TAGS = (TAG_B, TAG_I, TAG_O)

_URL_RE = re.compile(r"https?://")
# Alternation order matters: hashtags first, then the n't contraction split,
# then plain alphanumeric runs, then single punctuation characters.
_TOKEN_RE = re.compile(r"#[A-Za-z0-9_]+|n't|[A-Za-z0-9]+(?=n't)|[A-Za-z0-9]+|[^\sA-Za-z0-9]")
_HASHTAG_BOUNDARY_RE = re.compile(r"(?<=[^A-Z])(?=[A-Z])")


class CorpusFormatError(ValueError):
    """A corpus record failed validation (bad JSON, offsets, or spans)."""


@dataclass(frozen=True)
class CharSpan:
    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty or inverted span [{self.start}, {self.end})")


@dataclass(frozen=True)
class Token:
    surface: str
    start: int
    end: int


@dataclass
class AnnotatedPost:
    id: str
    text: str
    spans: list[CharSpan] = field(default_factory=list)
    predicted_spans: list[CharSpan] | None = None

    def __post_init__(self):
        check_spans(self.spans, len(self.text), self.id)


def check_spans(spans: list[CharSpan], text_len: int, post_id: str = "?") -> None:
    """Reject out-of-range, unsorted, or overlapping spans."""
    prev_end = -1
    for sp in spans:
        if sp.start < 0 or sp.end > text_len:
            raise CorpusFormatError(
                f"record {post_id!r}: span [{sp.start}, {sp.end}) out of range for text of length {text_len}"
            )
        if sp.start < prev_end:
            raise CorpusFormatError(f"record {post_id!r}: spans overlap or are unsorted at [{sp.start}, {sp.end})")
        prev_end = sp.end


@dataclass
class OffsetMap:
    """Mapping between raw text offsets and normalized text offsets.

    ``norm_to_raw[i]`` is the raw index of the character at normalized
    position ``i``. ``raw_to_norm[j]`` is the normalized index of raw
    character ``j``, or -1 if it was removed.
    """

    norm_to_raw: list[int]
    raw_to_norm: list[int]

    def remap_span(self, start: int, end: int) -> tuple[int, int] | None:
        """Project a raw-text span onto the normalized text.

        Endpoints snap inward past removed characters; returns None when the
        whole span was removed.
        """
        kept = [self.raw_to_norm[j] for j in range(start, end) if self.raw_to_norm[j] >= 0]
        if not kept:
            return None
        return kept[0], kept[-1] + 1


def _is_junk_chunk(chunk: str) -> bool:
    # URL tokens, and tokens with no ASCII alphanumeric character at all
    # (emoji, arrows, bare punctuation runs), get dropped wholesale.
    if _URL_RE.match(chunk):
        return True
    return not any(c.isascii() and c.isalnum() for c in chunk)


def normalize_text(raw: str) -> tuple[str, OffsetMap]:
    """Strip URL tokens and special-character-only tokens, keeping an offset map.

    A removed token swallows the whitespace run after it (or before it when
    it ends the text) so the remaining tokens stay singly spaced. Idempotent:
    a clean text maps through unchanged.
    """
    keep = [True] * len(raw)
    for m in re.finditer(r"\S+", raw):
        if not _is_junk_chunk(m.group()):
            continue
        for j in range(m.start(), m.end()):
            keep[j] = False
        j = m.end()
        if j < len(raw) and raw[j].isspace():
            while j < len(raw) and raw[j].isspace():
                keep[j] = False
                j += 1
        else:
            j = m.start() - 1
            while j >= 0 and raw[j].isspace() and keep[j]:
                keep[j] = False
                j -= 1
    norm_chars = []
    norm_to_raw = []
    raw_to_norm = [-1] * len(raw)
    for j, c in enumerate(raw):
        if keep[j]:
            raw_to_norm[j] = len(norm_chars)
            norm_chars.append(c)
            norm_to_raw.append(j)
    return "".join(norm_chars), OffsetMap(norm_to_raw, raw_to_norm)


def normalize_post(post: AnnotatedPost) -> tuple[AnnotatedPost, OffsetMap, int]:
    """Normalize a post's text and remap its gold spans.

    Returns the rewritten post, the offset map, and the number of gold spans
    that vanished entirely with the removed text.
    """
    text, omap = normalize_text(post.text)
    spans = []
    dropped = 0
    for sp in post.spans:
        remapped = omap.remap_span(sp.start, sp.end)
        if remapped is None:
            dropped += 1
        else:
            spans.append(CharSpan(*remapped))
    return AnnotatedPost(post.id, text, spans), omap, dropped


def split_hashtag(token: str) -> list[str]:
    """Split a '#'-prefixed token on underscores and lower-to-upper boundaries.

    '#WuhanLab' -> ['Wuhan', 'Lab']; '#covid_19' -> ['covid', '19'];
    '#COVID19' -> ['COVID19'] (a run of consecutive uppercase stays whole).
    """
    if not token.startswith("#"):
        raise ValueError(f"not a hashtag token: {token!r}")
    body = token[1:]
    pieces = []
    for part in body.split("_"):
        pieces.extend(p for p in _HASHTAG_BOUNDARY_RE.split(part) if p)
    return pieces


def tokenize(text: str) -> list[Token]:
    """Whitespace/punctuation tokenizer with exact character offsets.

    Hashtags are expanded through ``split_hashtag`` with each piece keeping
    its sub-range of the original offsets; the trailing contraction n't is
    split from its stem; every other punctuation character is its own token.
    """
    tokens = []
    for m in _TOKEN_RE.finditer(text):
        surface = m.group()
        if surface.startswith("#") and len(surface) > 1:
            cursor = m.start()
            for piece in split_hashtag(surface):
                at = text.index(piece, cursor)
                tokens.append(Token(piece, at, at + len(piece)))
                cursor = at + len(piece)
        else:
            tokens.append(Token(surface, m.start(), m.end()))
    return tokens


def encode_bio(tokens: list[Token], spans: list[CharSpan]) -> list[str]:
    """Tag tokens with B/I/O against character spans.

    A token is in-span iff its character range intersects the span; the first
    token of each span gets B, the rest I. Spans must be sorted and
    non-overlapping.
    """
    prev_end = -1
    for sp in spans:
        if sp.start < prev_end:
            raise ValueError(f"spans overlap or are unsorted at [{sp.start}, {sp.end})")
        prev_end = sp.end
    tags = [TAG_O] * len(tokens)
    for sp in spans:
        members = [
            i
            for i, tok in enumerate(tokens)
            if tok.start < sp.end and sp.start < tok.end and tags[i] == TAG_O
        ]
        for rank, i in enumerate(members):
            tags[i] = TAG_B if rank == 0 else TAG_I
    return tags


def decode_bio(tokens: list[Token], tags: list[str]) -> tuple[list[CharSpan], int]:
    """Turn a BIO tag sequence back into character spans.

    Each maximal B I* run becomes one span from the first token's start to the
    last token's end. A stray I (at position 0 or after O) is repaired by
    treating it as B; the repair count is returned for diagnostics.
    """
    if len(tags) != len(tokens):
        raise ValueError(f"{len(tags)} tags for {len(tokens)} tokens")
    spans = []
    repairs = 0
    run_start = None
    last = None
    for i, tag in enumerate(tags):
        if tag not in TAGS:
            raise ValueError(f"unknown tag {tag!r} at position {i}")
        starts_run = tag == TAG_B or (tag == TAG_I and run_start is None)
        if tag == TAG_I and run_start is None:
            repairs += 1
        if starts_run:
            if run_start is not None:
                spans.append(CharSpan(tokens[run_start].start, tokens[last].end))
            run_start = i
            last = i
        elif tag == TAG_I:
            last = i
        else:
            if run_start is not None:
                spans.append(CharSpan(tokens[run_start].start, tokens[last].end))
            run_start = None
    if run_start is not None:
        spans.append(CharSpan(tokens[run_start].start, tokens[last].end))
    return spans, repairs


def _parse_span_list(raw_spans, text_len: int, post_id: str, lineno: int) -> list[CharSpan]:
    spans = []
    for s in raw_spans:
        try:
            spans.append(CharSpan(int(s["start"]), int(s["end"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(f"line {lineno}: record {post_id!r}: bad span {s!r}: {exc}") from exc
    try:
        check_spans(spans, text_len, post_id)
    except CorpusFormatError as exc:
        raise CorpusFormatError(f"line {lineno}: {exc}") from exc
    return spans


def load_corpus(path) -> list[AnnotatedPost]:
    """Read a line-delimited JSON corpus; malformed records fail with line numbers."""
    posts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict) or "id" not in rec or "text" not in rec:
                raise CorpusFormatError(f"line {lineno}: record must be an object with 'id' and 'text'")
            post_id = str(rec["id"])
            text = rec["text"]
            if not isinstance(text, str):
                raise CorpusFormatError(f"line {lineno}: record {post_id!r}: 'text' must be a string")
            spans = _parse_span_list(rec.get("spans", []), len(text), post_id, lineno)
            predicted = None
            if "predicted_spans" in rec:
                predicted = _parse_span_list(rec["predicted_spans"], len(text), post_id, lineno)
            post = AnnotatedPost(post_id, text, spans)
            post.predicted_spans = predicted
            posts.append(post)
    return posts


def save_corpus(posts: list[AnnotatedPost], path) -> None:
    """Write posts as line-delimited JSON in a stable field order."""
    with open(path, "w", encoding="utf-8") as fh:
        for post in posts:
            rec = {
                "id": post.id,
                "text": post.text,
                "spans": [{"start": s.start, "end": s.end} for s in post.spans],
            }
            if post.predicted_spans is not None:
                rec["predicted_spans"] = [{"start": s.start, "end": s.end} for s in post.predicted_spans]
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

"""Rule-based {entity, position, exist} extraction and prompt rendering.

Entities and anatomical positions are tagged by longest lexicon match inside
each sentence; each entity takes the nearest position of its sentence. An
entity is *absent* when a negation cue precedes it within the scope window
with no scope-breaking token in between (a NegEx-style rule).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from kinject.corpus import Report, tokenize
from kinject.errors import DataError, MalformedLineError

EXIST, ABSENT = "exist", "absent"

TEMPLATES = {
    "negated": re.compile(r"no [a-z0-9 .]+"),
    "position_is_entity": re.compile(r"[a-z0-9 .]+ is [a-z0-9 .]+"),
    "entity_located_at": re.compile(r"[a-z0-9 .]+ is located at [a-z0-9 .]+"),
    "fallback": re.compile(r"[a-z0-9 .]+ is present"),
}


@dataclass(frozen=True)
class Triplet:
    entity: tuple[str, ...]
    category: str
    position: tuple[str, ...] | None
    exist: str

    def __post_init__(self):
        if not self.entity:
            raise ValueError("triplet entity must be non-empty")
        if self.exist not in (EXIST, ABSENT):
            raise ValueError(f"exist must be 'exist' or 'absent', got {self.exist!r}")

    def to_json(self, report_id=None) -> dict:
        out = {"entity": " ".join(self.entity), "category": self.category,
               "position": " ".join(self.position) if self.position else None, "exist": self.exist}
        if report_id is not None:
            out = {"report_id": report_id, **out}
        return out


@dataclass(frozen=True)
class Lexicons:
    entities: dict
    positions: frozenset
    negation_cues: frozenset
    scope_breakers: frozenset = frozenset({"but", ";", "however", "although"})
    scope_window: int = 6

    def __post_init__(self):
        clash = set(self.entities) & set(self.positions)
        if clash:
            raise DataError(f"lexicon entries are both entity and position: {sorted(clash)}")
        object.__setattr__(self, "_max_span", max((len(x) for x in [*self.entities, *self.positions]),
                                                  default=0))

    @classmethod
    def from_json(cls, obj: dict) -> "Lexicons":
        def seq(s):
            return tuple(s.lower().split())

        try:
            entities = {seq(e["name"]): e["category"] for e in obj["entities"]}
            return cls(
                entities=entities,
                positions=frozenset(seq(p) for p in obj["positions"]),
                negation_cues=frozenset(seq(c) for c in obj["negation_cues"]),
                scope_breakers=frozenset(obj.get("scope_breakers", ["but", ";", "however", "although"])),
                scope_window=int(obj.get("scope_window", 6)),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise DataError(f"malformed lexicon file: {exc}") from None

    def replace(self, **changes) -> "Lexicons":
        fields = dict(entities=self.entities, positions=self.positions,
                      negation_cues=self.negation_cues, scope_breakers=self.scope_breakers,
                      scope_window=self.scope_window)
        fields.update(changes)
        return Lexicons(**fields)


def load_lexicons(path=None) -> Lexicons:
    if path is None:
        text = resources.files("kinject.data").joinpath("lexicons.json").read_text()
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise DataError(f"lexicon file not found: {path}") from None
    return Lexicons.from_json(json.loads(text))


def detect_negation(sentence, span, lex: Lexicons) -> str:
    """``"absent"`` if a cue ends before ``span`` within the window, unbroken."""
    sentence = list(sentence)
    start = span[0]
    for cue in lex.negation_cues:
        k = len(cue)
        for c in range(0, start - k + 1):
            if tuple(sentence[c:c + k]) != cue:
                continue
            gap = sentence[c + k:start]
            if len(gap) < lex.scope_window and not any(t in lex.scope_breakers for t in gap):
                return ABSENT
    return EXIST


def _sentences(tokens):
    sent = []
    for t in tokens:
        if t == ".":
            if sent:
                yield sent
            sent = []
        else:
            sent.append(t)
    if sent:
        yield sent


def _tag(sentence, lex):
    spans = []
    i = 0
    n = len(sentence)
    while i < n:
        hit = None
        for length in range(min(lex._max_span, n - i), 0, -1):
            seq = tuple(sentence[i:i + length])
            if seq in lex.entities:
                hit = (i, i + length, "entity")
                break
            if seq in lex.positions:
                hit = (i, i + length, "position")
                break
        if hit:
            spans.append(hit)
            i = hit[1]
        else:
            i += 1
    return spans


def _gap(a, b):
    return a[0] - b[1] if b[1] <= a[0] else b[0] - a[1]


def extract_triplets(report, lex: Lexicons) -> list[Triplet]:
    """Triplets in text order, duplicates removed. ``report`` may be a Report or tokens."""
    tokens = report.tokens if isinstance(report, Report) else tuple(report)
    out, seen = [], set()
    for sent in _sentences(tokens):
        spans = _tag(sent, lex)
        positions = [s for s in spans if s[2] == "position"]
        for span in spans:
            if span[2] != "entity":
                continue
            entity = tuple(sent[span[0]:span[1]])
            pos = None
            if positions:
                # nearest by token gap; on ties the earlier span wins
                best = min(positions, key=lambda p: (_gap(span, p), p[0]))
                pos = tuple(sent[best[0]:best[1]])
            trip = Triplet(entity, lex.entities[entity], pos, detect_negation(sent, span, lex))
            if trip not in seen:
                seen.add(trip)
                out.append(trip)
    return out


def template_of(t: Triplet) -> str:
    if t.exist == ABSENT:
        return "negated"
    if t.position is None:
        return "fallback"
    return "position_is_entity" if t.category == "adjective" else "entity_located_at"


def render_prompt(t: Triplet) -> str:
    entity = " ".join(t.entity).lower()
    position = " ".join(t.position).lower() if t.position else ""
    kind = template_of(t)
    if kind == "negated":
        return f"no {entity}"
    if kind == "fallback":
        return f"{entity} is present"
    if kind == "position_is_entity":
        return f"{position} is {entity}"
    return f"{entity} is located at {position}"


def unique_prompts(triplet_lists, max_triplets: int | None = None) -> list[str]:
    prompts, seen = [], set()
    for triplets in triplet_lists:
        for t in triplets:
            p = render_prompt(t)
            if p not in seen:
                seen.add(p)
                prompts.append(p)
    return prompts[:max_triplets] if max_triplets else prompts


def encode_triplets(triplet_lists, encoder, d: int, max_triplets: int = 32):
    """K_t: one encoder row per unique prompt (first-occurrence order, truncated
    to ``max_triplets``); a single zero row when there are no triplets.

    Returns ``(K_t, prompts)``.
    """
    prompts = unique_prompts(triplet_lists, max_triplets)
    if not prompts:
        return np.zeros((1, d)), []
    rows = np.stack([encoder.encode_text(p) for p in prompts])
    if rows.shape[1] != d:
        raise DataError(f"encoder produced dim {rows.shape[1]}, expected {d}")
    return rows, prompts


def load_triplets(path) -> dict[str, list[Triplet]]:
    """Pre-extracted triplets, JSON-lines of {report_id, entity, category, position, exist}."""
    out: dict[str, list[Triplet]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pos = rec.get("position")
                t = Triplet(tuple(tokenize(rec["entity"])), rec["category"],
                            tuple(tokenize(pos)) if pos else None, rec["exist"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedLineError(path, lineno, str(exc)) from None
            out.setdefault(rec["report_id"], []).append(t)
    return out


def save_triplets(triplets_by_report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, triplets in triplets_by_report.items():
            for t in triplets:
                fh.write(json.dumps(t.to_json(rid)) + "\n")

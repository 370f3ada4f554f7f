"""Declarative closed-vocabulary survey: parsing, serialization, answer checks.

Schema files are TOML. A schema has an ``id``, ``title``, ``description``
and an ordered array of ``[[question]]`` tables. See ``docs/schema_format.md``
for the full grammar.
"""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Any, Sequence

import tomli
import tomli_w

UNSURE_LABEL = "I'm not sure"

_CODE_RE = re.compile(r"^[a-z]$")


class SchemaError(ValueError):
    """Raised when a schema file cannot be parsed or breaks an invariant."""

    def __init__(self, message: str, *, question_id: str | None = None,
                 rule: str | None = None, line: int | None = None,
                 column: int | None = None):
        super().__init__(message)
        self.question_id = question_id
        self.rule = rule
        self.line = line
        self.column = column


class UnmappableAnswerError(ValueError):
    """An agent value that matches neither a code nor a label."""

    def __init__(self, question_id: str, raw: Any):
        super().__init__(f"{question_id}: cannot map {raw!r} onto the answer vocabulary")
        self.question_id = question_id
        self.raw = raw


class QuestionKind(str, Enum):
    SUMMARY_TEXT = "summary_text"
    KEYWORD_LIST = "keyword_list"
    SINGLE_CHOICE = "single_choice"
    MULTI_CHOICE = "multi_choice"

    @property
    def is_choice(self) -> bool:
        return self in (QuestionKind.SINGLE_CHOICE, QuestionKind.MULTI_CHOICE)


@dataclass(frozen=True)
class Choice:
    code: str
    label: str


@dataclass(frozen=True)
class Question:
    id: str
    kind: QuestionKind
    prompt: str
    choices: tuple[Choice, ...] = ()
    max_words: int | None = None
    max_items: int | None = None
    allow_unsure: bool = False
    title: str = ""

    def choice(self, code: str) -> Choice:
        for c in self.choices:
            if c.code == code:
                return c
        raise KeyError(f"{self.id}: unknown code {code!r}")

    def code_for(self, label: str) -> str:
        """Return the code whose label equals ``label`` (exact match)."""
        for c in self.choices:
            if c.label == label:
                return c.code
        raise KeyError(f"{self.id}: no choice labelled {label!r}")

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(c.code for c in self.choices)


@dataclass(frozen=True)
class SurveySchema:
    id: str
    title: str
    description: str
    questions: tuple[Question, ...]

    def question(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise KeyError(f"unknown question id {question_id!r}")

    @property
    def question_ids(self) -> tuple[str, ...]:
        return tuple(q.id for q in self.questions)


@dataclass(frozen=True)
class Answer:
    """One answer. Text kinds fill ``text`` (summary) or ``items`` (keywords);
    choice kinds fill ``codes``."""

    question_id: str
    text: str | None = None
    items: tuple[str, ...] | None = None
    codes: tuple[str, ...] | None = None

    @property
    def value(self) -> str | tuple[str, ...]:
        if self.text is not None:
            return self.text
        if self.items is not None:
            return self.items
        return self.codes or ()


@dataclass
class Verdict:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


# --------------------------------------------------------------------------
# parsing


def _check_positive_int(value: Any, qid: str, name: str) -> int | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise SchemaError(f"question {qid!r}: {name} must be a positive integer",
                          question_id=qid, rule=name)
    return value


def _parse_choices(raw: Any, qid: str) -> tuple[Choice, ...]:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise SchemaError(f"question {qid!r}: choices must be an array", question_id=qid,
                          rule="choices")
    out = []
    for i, item in enumerate(raw):
        if isinstance(item, str):
            if i >= 26:
                raise SchemaError(f"question {qid!r}: more than 26 positional choices",
                                  question_id=qid, rule="choice_code")
            code, label = string.ascii_lowercase[i], item
        elif isinstance(item, dict):
            unknown = set(item) - {"code", "label"}
            if unknown:
                raise SchemaError(f"question {qid!r}: unknown choice keys {sorted(unknown)}",
                                  question_id=qid, rule="choice_keys")
            code, label = item.get("code"), item.get("label")
        else:
            raise SchemaError(f"question {qid!r}: choice #{i + 1} must be a string or table",
                              question_id=qid, rule="choice_type")
        if not isinstance(code, str) or not _CODE_RE.match(code):
            raise SchemaError(f"question {qid!r}: choice code {code!r} must match [a-z]",
                              question_id=qid, rule="choice_code")
        if not isinstance(label, str) or not label.strip():
            raise SchemaError(f"question {qid!r}: choice {code!r} has an empty label",
                              question_id=qid, rule="choice_label")
        out.append(Choice(code, label))
    return tuple(out)


_QUESTION_KEYS = {"id", "title", "kind", "prompt", "choices", "max_words", "max_items",
                  "allow_unsure"}


def _parse_question(raw: dict[str, Any], index: int) -> Question:
    qid = raw.get("id")
    if not isinstance(qid, str) or not qid:
        raise SchemaError(f"question #{index + 1}: missing string id", rule="id")
    unknown = set(raw) - _QUESTION_KEYS
    if unknown:
        raise SchemaError(f"question {qid!r}: unknown keys {sorted(unknown)}",
                          question_id=qid, rule="keys")
    try:
        kind = QuestionKind(raw.get("kind"))
    except ValueError:
        raise SchemaError(f"question {qid!r}: unknown kind {raw.get('kind')!r}",
                          question_id=qid, rule="kind") from None
    prompt = raw.get("prompt")
    if not isinstance(prompt, str) or not prompt.strip():
        raise SchemaError(f"question {qid!r}: prompt must be a non-empty string",
                          question_id=qid, rule="prompt")
    allow_unsure = raw.get("allow_unsure", False)
    if not isinstance(allow_unsure, bool):
        raise SchemaError(f"question {qid!r}: allow_unsure must be a boolean",
                          question_id=qid, rule="allow_unsure")
    title = raw.get("title", "")
    if not isinstance(title, str):
        raise SchemaError(f"question {qid!r}: title must be a string", question_id=qid,
                          rule="title")
    q = Question(
        id=qid,
        kind=kind,
        prompt=prompt,
        choices=_parse_choices(raw.get("choices"), qid),
        max_words=_check_positive_int(raw.get("max_words"), qid, "max_words"),
        max_items=_check_positive_int(raw.get("max_items"), qid, "max_items"),
        allow_unsure=allow_unsure,
        title=title,
    )
    check_question(q)
    return q


def check_question(q: Question) -> None:
    """Raise SchemaError when ``q`` breaks a question invariant."""
    def fail(rule: str, msg: str) -> None:
        raise SchemaError(f"question {q.id!r}: {msg}", question_id=q.id, rule=rule)

    codes = [c.code for c in q.choices]
    if len(set(codes)) != len(codes):
        dup = sorted({c for c in codes if codes.count(c) > 1})
        fail("unique_codes", f"duplicate choice codes {dup}")
    if q.kind.is_choice:
        if len(q.choices) < 2:
            fail("min_choices", f"{q.kind.value} needs at least 2 choices")
    elif q.choices:
        fail("text_no_choices", f"{q.kind.value} must not declare choices")
    if q.allow_unsure:
        n = sum(1 for c in q.choices if c.label == UNSURE_LABEL)
        if n != 1:
            fail("unsure_sentinel", f"allow_unsure needs exactly one {UNSURE_LABEL!r} choice")
    if q.kind is QuestionKind.SUMMARY_TEXT and q.max_words is None:
        fail("max_words", "summary_text requires max_words")
    if q.kind is not QuestionKind.SUMMARY_TEXT and q.max_words is not None:
        fail("max_words", "max_words only applies to summary_text")
    if q.kind is QuestionKind.KEYWORD_LIST and q.max_items is None:
        fail("max_items", "keyword_list requires max_items")
    if q.kind is not QuestionKind.KEYWORD_LIST and q.max_items is not None:
        fail("max_items", "max_items only applies to keyword_list")


def parse_survey_schema(source_text: str) -> SurveySchema:
    """Parse schema-file text into a validated :class:`SurveySchema`."""
    try:
        doc = tomli.loads(source_text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise SchemaError(f"schema parse error: {exc}", rule="syntax", line=line,
                          column=col) from exc
    unknown = set(doc) - {"id", "title", "description", "question"}
    if unknown:
        raise SchemaError(f"unknown top-level keys {sorted(unknown)}", rule="keys")
    for key in ("id", "title"):
        if not isinstance(doc.get(key), str) or not doc[key]:
            raise SchemaError(f"schema {key} must be a non-empty string", rule=key)
    description = doc.get("description", "")
    if not isinstance(description, str):
        raise SchemaError("schema description must be a string", rule="description")
    raw_questions = doc.get("question", [])
    if not isinstance(raw_questions, list) or not raw_questions:
        raise SchemaError("schema must declare at least one [[question]]", rule="min_questions")
    questions = tuple(_parse_question(q, i) for i, q in enumerate(raw_questions))
    seen: set[str] = set()
    for q in questions:
        if q.id in seen:
            raise SchemaError(f"duplicate question id {q.id!r}", question_id=q.id,
                              rule="unique_ids")
        seen.add(q.id)
    return SurveySchema(doc["id"], doc["title"], description, questions)


def serialize_survey_schema(schema: SurveySchema) -> str:
    """Render ``schema`` back into schema-file text (inverse of parsing)."""
    questions = []
    for q in schema.questions:
        d: dict[str, Any] = {"id": q.id}
        if q.title:
            d["title"] = q.title
        d["kind"] = q.kind.value
        d["prompt"] = q.prompt
        if q.max_words is not None:
            d["max_words"] = q.max_words
        if q.max_items is not None:
            d["max_items"] = q.max_items
        if q.allow_unsure:
            d["allow_unsure"] = True
        if q.choices:
            positional = all(c.code == string.ascii_lowercase[i]
                             for i, c in enumerate(q.choices))
            d["choices"] = ([c.label for c in q.choices] if positional else
                            [{"code": c.code, "label": c.label} for c in q.choices])
        questions.append(d)
    doc = {"id": schema.id, "title": schema.title, "description": schema.description,
           "question": questions}
    return tomli_w.dumps(doc, multiline_strings=True)


def load_survey_schema(path) -> SurveySchema:
    with open(path, encoding="utf-8") as fh:
        return parse_survey_schema(fh.read())


def default_schema_text() -> str:
    return (resources.files("commitsurvey") / "data" / "surveys" /
            "commit_survey_v1.toml").read_text(encoding="utf-8")


def default_schema() -> SurveySchema:
    """The bundled eBPF commit survey (seven questions)."""
    return parse_survey_schema(default_schema_text())


# --------------------------------------------------------------------------
# answers


def count_words(text: str) -> int:
    return len(text.split())


def validate_answer(question: Question, answer: Answer) -> Verdict:
    v = Verdict()
    if answer.question_id != question.id:
        v.violations.append(f"answer for {answer.question_id!r} checked against {question.id!r}")
        return v
    kind = question.kind
    if kind is QuestionKind.SUMMARY_TEXT:
        if answer.text is None or answer.items is not None or answer.codes is not None:
            v.violations.append(f"{question.id}: summary_text requires text only")
            return v
        if not answer.text.strip():
            v.violations.append(f"{question.id}: empty answer")
        n = count_words(answer.text)
        if question.max_words is not None and n > question.max_words:
            v.violations.append(f"{question.id}: {n} words exceeds max_words {question.max_words}")
    elif kind is QuestionKind.KEYWORD_LIST:
        if answer.items is None or answer.text is not None or answer.codes is not None:
            v.violations.append(f"{question.id}: keyword_list requires a list of strings")
            return v
        if not answer.items:
            v.violations.append(f"{question.id}: empty answer")
        if any(not s.strip() for s in answer.items):
            v.violations.append(f"{question.id}: empty keyword")
        if question.max_items is not None and len(answer.items) > question.max_items:
            v.violations.append(f"{question.id}: {len(answer.items)} items exceeds "
                                f"max_items {question.max_items}")
    else:
        if answer.codes is None or answer.text is not None or answer.items is not None:
            v.violations.append(f"{question.id}: {kind.value} requires choice codes")
            return v
        known = set(question.codes)
        for code in answer.codes:
            if code not in known:
                v.violations.append(f"{question.id}: unknown code {code}")
        if kind is QuestionKind.SINGLE_CHOICE:
            if len(answer.codes) != 1:
                v.violations.append(f"{question.id}: single_choice requires exactly one code")
        else:
            if not answer.codes:
                v.violations.append(f"{question.id}: multi_choice requires at least one code")
            if len(set(answer.codes)) != len(answer.codes):
                v.violations.append(f"{question.id}: duplicate codes")
    return v


def _map_choice(question: Question, raw: Any) -> str:
    if not isinstance(raw, str):
        raise UnmappableAnswerError(question.id, raw)
    s = raw.strip()
    if s in question.codes:
        return s
    # "(b)" / "b)" / "b." prefixes are common agent noise around bare codes
    m = re.fullmatch(r"\(?([a-z])[).]?", s)
    if m and m.group(1) in question.codes:
        return m.group(1)
    folded = s.casefold()
    for c in question.choices:
        if c.label.strip().casefold() == folded:
            return c.code
    raise UnmappableAnswerError(question.id, raw)


def canonicalize_answer(question: Question, raw_value: Any) -> Answer:
    """Map an agent value (code or label) onto the canonical :class:`Answer`."""
    kind = question.kind
    if kind is QuestionKind.SUMMARY_TEXT:
        if not isinstance(raw_value, str):
            raise UnmappableAnswerError(question.id, raw_value)
        return Answer(question.id, text=raw_value.strip())
    if kind is QuestionKind.KEYWORD_LIST:
        if isinstance(raw_value, str):
            raw_value = [p for p in raw_value.split(",")]
        if not isinstance(raw_value, list) or not all(isinstance(x, str) for x in raw_value):
            raise UnmappableAnswerError(question.id, raw_value)
        return Answer(question.id, items=tuple(x.strip() for x in raw_value))
    if kind is QuestionKind.SINGLE_CHOICE:
        if isinstance(raw_value, list):
            return Answer(question.id, codes=tuple(_map_choice(question, x) for x in raw_value))
        return Answer(question.id, codes=(_map_choice(question, raw_value),))
    if isinstance(raw_value, str):
        raw_value = [raw_value]
    if not isinstance(raw_value, list):
        raise UnmappableAnswerError(question.id, raw_value)
    return Answer(question.id, codes=tuple(_map_choice(question, x) for x in raw_value))


def answer_to_json(question: Question, answer: Answer) -> Any:
    """The JSON value ``answer`` takes in the response contract."""
    if question.kind is QuestionKind.SUMMARY_TEXT:
        return answer.text
    if question.kind is QuestionKind.KEYWORD_LIST:
        return list(answer.items or ())
    if question.kind is QuestionKind.SINGLE_CHOICE:
        return (answer.codes or ("",))[0]
    return list(answer.codes or ())


def response_contract(schema: SurveySchema) -> dict[str, Any]:
    """JSON-Schema style descriptor of the object an agent must return.

    One property per question id, in schema order. Deterministic for a given
    schema, so ``json.dumps`` of the result is byte-stable.
    """
    props: dict[str, Any] = {}
    for q in schema.questions:
        if q.kind is QuestionKind.SUMMARY_TEXT:
            props[q.id] = {"type": "string", "maxWords": q.max_words}
        elif q.kind is QuestionKind.KEYWORD_LIST:
            props[q.id] = {"type": "array", "items": {"type": "string"},
                           "minItems": 1, "maxItems": q.max_items}
        elif q.kind is QuestionKind.SINGLE_CHOICE:
            props[q.id] = {"type": "string", "enum": list(q.codes)}
        else:
            props[q.id] = {"type": "array", "items": {"type": "string", "enum": list(q.codes)},
                           "minItems": 1, "uniqueItems": True}
    return {
        "type": "object",
        "properties": props,
        "required": list(schema.question_ids),
    }


def contract_json(schema: SurveySchema) -> str:
    return json.dumps(response_contract(schema), indent=2, ensure_ascii=False)


def unsure_code(question: Question) -> str | None:
    for c in question.choices:
        if c.label == UNSURE_LABEL:
            return c.code
    return None


def labels(question: Question, codes: Sequence[str]) -> list[str]:
    return [question.choice(c).label for c in codes]

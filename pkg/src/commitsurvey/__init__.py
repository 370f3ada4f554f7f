"""Turn commit history into a structured dataset by surveying an LLM agent per commit."""

from .survey_schema import (
    Answer,
    Choice,
    Question,
    QuestionKind,
    SurveySchema,
    default_schema,
    parse_survey_schema,
)

__all__ = [
    "Answer",
    "Choice",
    "Question",
    "QuestionKind",
    "SurveySchema",
    "default_schema",
    "parse_survey_schema",
]

__version__ = "0.1.0"

"""Prompt templates for the three synthesis paradigms.

The template strings are fixed verbatim; rendering only substitutes the
document/outline slot, the audience phrase, and the chapter number.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

KINDS = ("HQ", "QA", "TXBK_OUTLINE", "TXBK_CHAPTER")

AUDIENCE_PHRASES = {
    "grade_school": "grade school students",
    "college": "college students",
    "expert": "field experts",
    "general": "general public",
}

_SYSTEM_DEFAULT = (
    "Provide direct and detailed response to the instructions without "
    "adding additional notes."
)
_SYSTEM_CHAPTER = (
    "Provide a direct and detailed response to the instructions without "
    "adding additional notes."
)

_USER_HQ = (
    "For the following document, regardless of its original content or "
    "formatting, write a full article of the same content in high quality "
    "English language as in texts on Wikipedia: {doc}. Provide the "
    "rephrased article without any additional notes. Long article with "
    "full length and complete details. Rephrased article:"
)

_USER_QA = (
    "For the following document, regardless of its original content or "
    "formatting, convert it into a comprehensive list of question-answer "
    "pairs with multiple tags of \"Question:\" followed by \"Answer:\", "
    "where questions and answers cover complete information of the "
    "original document. Document: {doc}.  Provide the converted "
    "question-answer pairs without any additional notes. Question-answer "
    "pairs with corresponding tags (\"Question:\", \"Answer:\"):"
)

_USER_TXBK_OUTLINE = (
    "Imagine you are a prolific author tasked with writing a textbook. "
    "You are working on writing a textbook involving the knowledge and "
    "information of the following text. Text: {doc}\n Your task is to "
    "write an outline for the textbook. Your target audiences are "
    "{audience}. The textbook has 10 chapters in total plus title, "
    "introduction, and appendices. Textbook outline:"
)

_USER_TXBK_CHAPTER = (
    "Imagine you are a prolific author tasked with writing a textbook. "
    "You are working on writing a textbook with the following outline.\n "
    "Outline: {doc} \n Your task is to write Chapter {chapter} of the "
    "textbook. Your target audiences are {audience}. Include exercises at "
    "the end of the chapter to test the reader's knowledge of the chapter "
    "and then provide reference answers to each question."
)


class PromptError(Exception):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    audience: Optional[str] = None  # required for TXBK kinds

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PromptError(f"unknown kind {self.kind!r}")
        if self.kind.startswith("TXBK"):
            if self.audience not in AUDIENCE_PHRASES:
                raise PromptError(
                    f"TXBK templates need an audience in {sorted(AUDIENCE_PHRASES)}"
                )
        elif self.audience is not None:
            raise PromptError(f"{self.kind} takes no audience")

    @property
    def system_text(self) -> str:
        return _SYSTEM_CHAPTER if self.kind == "TXBK_CHAPTER" else _SYSTEM_DEFAULT


def render_prompt(
    template: PromptTemplate,
    source: str,
    chapter_index: Optional[int] = None,
) -> Tuple[str, str]:
    """(system, user) messages with the slot filled verbatim."""
    if not source:
        raise PromptError("source text must be non-empty")
    if template.kind == "TXBK_CHAPTER":
        if chapter_index is None:
            raise PromptError("TXBK_CHAPTER requires a chapter index")
        if not 1 <= chapter_index <= 10:
            raise PromptError(f"chapter index {chapter_index} outside [1,10]")
    elif chapter_index is not None:
        raise PromptError(f"{template.kind} takes no chapter index")

    if template.kind == "HQ":
        user = _USER_HQ.format(doc=source)
    elif template.kind == "QA":
        user = _USER_QA.format(doc=source)
    elif template.kind == "TXBK_OUTLINE":
        user = _USER_TXBK_OUTLINE.format(
            doc=source, audience=AUDIENCE_PHRASES[template.audience]
        )
    else:
        user = _USER_TXBK_CHAPTER.format(
            doc=source,
            chapter=chapter_index,
            audience=AUDIENCE_PHRASES[template.audience],
        )
    return template.system_text, user

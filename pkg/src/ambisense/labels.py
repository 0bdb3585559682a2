"""Activity vocabulary and label canonicalization."""

from __future__ import annotations

import re

SENSED_LABELS: tuple[str, ...] = (
    "eat",
    "paperdis",
    "write",
    "chop",
    "hand_wash",
    "pour_water",
    "clean_floor",
    "knock",
    "run",
    "curtain",
    "light_switch",
    "type",
    "door_pass",
    "wipe_desk",
    "chat",
    "basketball",
    "saw",
    "shave",
    "wash_dish",
    "teeth",
)

IDLE = "idle"

# Labels the reasoner may reference but the classifier never outputs.
REASONER_ONLY_LABELS: tuple[str, ...] = ("take_medication", "wear_coat", "call_for_help", "fall")

VOCABULARY: frozenset[str] = frozenset(SENSED_LABELS) | frozenset(REASONER_ONLY_LABELS) | {IDLE}

LABEL_INDEX: dict[str, int] = {name: i for i, name in enumerate(SENSED_LABELS)}

# Free-text phrasings seen in prompts and LLM answers.
ALIASES: dict[str, str] = {
    "brushing teeth": "teeth",
    "brush teeth": "teeth",
    "brushing": "teeth",
    "tooth brushing": "teeth",
    "wash hands": "hand_wash",
    "washing hands": "hand_wash",
    "hand washing": "hand_wash",
    "turn the switch": "light_switch",
    "turn on the light": "light_switch",
    "light switch": "light_switch",
    "paper dispenser": "paperdis",
    "using paper dispenser": "paperdis",
    "use paper dispenser": "paperdis",
    "take medication": "take_medication",
    "taking medication": "take_medication",
    "take pills": "take_medication",
    "pour water": "pour_water",
    "pouring water": "pour_water",
    "door pass": "door_pass",
    "wash dish": "wash_dish",
    "washing dishes": "wash_dish",
    "wipe desk": "wipe_desk",
    "clean floor": "clean_floor",
    "eating": "eat",
    "typing": "type",
    "writing": "write",
    "chopping": "chop",
    "running": "run",
    "chatting": "chat",
    "sawing": "saw",
    "shaving": "shave",
}


class UnknownLabelError(ValueError):
    def __init__(self, label: str) -> None:
        self.label = label
        super().__init__(f"unknown activity label {label!r}; vocabulary: {', '.join(sorted(VOCABULARY))}")


def canonicalize(text: str, *, allow_unknown: bool = False) -> str:
    """Map a free-text activity phrase to its canonical label.

    Raises UnknownLabelError unless ``allow_unknown`` is set, in which case the
    normalized snake_case form is returned as-is.
    """
    key = re.sub(r"\s+", " ", text.strip().strip("\"'`.").lower())
    if key in ALIASES:
        return ALIASES[key]
    snake = re.sub(r"[\s\-]+", "_", key)
    if snake in VOCABULARY or allow_unknown:
        return snake
    raise UnknownLabelError(text.strip())

"""Rule-based complex-activity detection over atomic-activity sequences.

Three rule kinds, written one per line::

    precede "teeth" before "eat" label "unhygienic behavior" msg "Brush before eating"
    require "take_medication" trigger "eat" before "pour_water" lookback 8 label "forgetting medication" msg "..."
    alert on "fall" severity critical label "fall detected" msg "Calling for help"

``check_sequence`` repairs a sequence by moving (precede) or inserting
(require) events until no rule changes it, and reports one finding per
complex label.
"""

from __future__ import annotations

import logging
import shlex
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .labels import UnknownLabelError, canonicalize

logger = logging.getLogger(__name__)

SEVERITIES = ("info", "warning", "critical")
DEFAULT_LOOKBACK = 8
MAX_PASSES = 10


class RuleSyntaxError(ValueError):
    def __init__(self, message: str, line: int) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}")


class FixpointError(RuntimeError):
    def __init__(self, rules: tuple["Rule", "Rule"]) -> None:
        self.rules = rules
        a, b = rules
        super().__init__(
            f"rules #{a.ordinal} ({a.complex_label!r}) and #{b.ordinal} ({b.complex_label!r}) "
            f"keep rewriting the sequence; no fixpoint within {MAX_PASSES} passes"
        )


@dataclass(frozen=True)
class Rule:
    kind: str  # "precede" | "require" | "alert"
    complex_label: str
    message: str
    ordinal: int = 0
    # precede
    before: str | None = None
    after: str | None = None
    # require
    required: str | None = None
    trigger: str | None = None
    insert_before: str | None = None  # None means "the trigger itself"
    lookback: int = DEFAULT_LOOKBACK
    # alert
    on: str | None = None
    severity: str = "warning"

    @property
    def anchor(self) -> str | None:
        return self.insert_before or self.trigger

    def to_dsl(self) -> str:
        q = _quote
        tail = f"label {q(self.complex_label)} msg {q(self.message)}"
        if self.kind == "precede":
            return f"precede {q(self.before)} before {q(self.after)} {tail}"
        if self.kind == "require":
            anchor = f" before {q(self.insert_before)}" if self.insert_before else ""
            return f"require {q(self.required)} trigger {q(self.trigger)}{anchor} lookback {self.lookback} {tail}"
        return f"alert on {q(self.on)} severity {self.severity} {tail}"


def _quote(text: str | None) -> str:
    return '"' + (text or "").replace("\\", "\\\\").replace('"', '\\"') + '"'


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    def of_kind(self, kind: str) -> list[Rule]:
        return [r for r in self.rules if r.kind == kind]

    def to_dsl(self) -> str:
        return "".join(r.to_dsl() + "\n" for r in self.rules)


@dataclass(frozen=True)
class Finding:
    complex_label: str
    rule_ordinal: int | None  # None when the finding came from the language model
    original: tuple[str, ...]
    corrected: tuple[str, ...]
    message: str
    severity: str


@dataclass(frozen=True)
class CheckResult:
    corrected: tuple[str, ...]
    findings: tuple[Finding, ...] = ()
    passes: int = 0

    @property
    def labels(self) -> list[str]:
        return [f.complex_label for f in self.findings]


# -- parsing -----------------------------------------------------------------------


def _label(token: str, lineno: int, *, allow_unknown: bool = False) -> str:
    try:
        return canonicalize(token, allow_unknown=allow_unknown)
    except UnknownLabelError as exc:
        raise RuleSyntaxError(str(exc), lineno) from None


class _Tokens:
    def __init__(self, tokens: list[str], lineno: int) -> None:
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno

    def peek(self) -> str | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, what: str) -> str:
        tok = self.peek()
        if tok is None:
            raise RuleSyntaxError(f"expected {what}, got end of line", self.lineno)
        self.pos += 1
        return tok

    def keyword(self, kw: str) -> None:
        tok = self.take(f"'{kw}'")
        if tok != kw:
            raise RuleSyntaxError(f"expected '{kw}', got {tok!r}", self.lineno)

    def done(self) -> None:
        if self.peek() is not None:
            raise RuleSyntaxError(f"unexpected trailing token {self.peek()!r}", self.lineno)


def _parse_line(line: str, lineno: int, ordinal: int) -> Rule:
    try:
        toks = _Tokens(shlex.split(line, comments=True), lineno)
    except ValueError as exc:
        raise RuleSyntaxError(str(exc), lineno) from None
    kind = toks.take("rule kind")
    if kind == "precede":
        before = _label(toks.take("label"), lineno)
        toks.keyword("before")
        after = _label(toks.take("label"), lineno)
        fields = dict(before=before, after=after)
    elif kind == "require":
        required = _label(toks.take("label"), lineno)
        toks.keyword("trigger")
        trigger = _label(toks.take("label"), lineno)
        fields = dict(required=required, trigger=trigger, lookback=DEFAULT_LOOKBACK)
        if toks.peek() == "before":
            toks.take("before")
            fields["insert_before"] = _label(toks.take("label"), lineno)
        if toks.peek() == "lookback":
            toks.take("lookback")
            raw = toks.take("lookback count")
            if not raw.isdigit() or int(raw) < 1:
                raise RuleSyntaxError(f"lookback must be an integer >= 1, got {raw!r}", lineno)
            fields["lookback"] = int(raw)
    elif kind == "alert":
        toks.keyword("on")
        # alert targets may name events the classifier cannot sense (e.g. falls)
        on = _label(toks.take("label"), lineno, allow_unknown=True)
        toks.keyword("severity")
        sev = toks.take("severity")
        if sev not in SEVERITIES:
            raise RuleSyntaxError(f"severity must be one of {', '.join(SEVERITIES)}, got {sev!r}", lineno)
        fields = dict(on=on, severity=sev)
    else:
        raise RuleSyntaxError(f"unknown rule kind {kind!r} (expected precede, require or alert)", lineno)
    toks.keyword("label")
    complex_label = toks.take("complex label")
    toks.keyword("msg")
    message = toks.take("message")
    toks.done()
    return Rule(kind=kind, complex_label=complex_label, message=message, ordinal=ordinal, **fields)


def parse_rules(text: str) -> RuleSet:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rules.append(_parse_line(stripped, lineno, ordinal=len(rules) + 1))
    return RuleSet(tuple(rules))


DEFAULT_RULES_DSL = """\
# Medication is taken with water, before the meal.
require "take_medication" trigger "eat" before "pour_water" lookback 8 label "forgetting medication" msg "Please take your medication before eating."
precede "teeth" before "eat" label "unhygienic behavior" msg "Brush your teeth and wash your hands before eating."
require "hand_wash" trigger "eat" lookback 8 label "unhygienic behavior" msg "Brush your teeth and wash your hands before eating."
require "light_switch" trigger "paperdis" lookback 8 label "preventing slipping" msg "Please turn on the light first to avoid slipping."
"""


def default_ruleset() -> RuleSet:
    return parse_rules(DEFAULT_RULES_DSL)


# -- checking -------------------------------------------------------------------------


def _apply_precede(seq: list[str], rule: Rule) -> bool:
    if rule.before not in seq or rule.after not in seq:
        return False
    i_after = seq.index(rule.after)
    i_before = seq.index(rule.before)
    if i_after > i_before:
        return False
    seq.insert(i_after, seq.pop(i_before))
    return True


def _apply_require(seq: list[str], rule: Rule) -> bool:
    changed = False
    t = 0
    while t < len(seq):
        if seq[t] == rule.trigger and rule.required not in seq[max(0, t - rule.lookback) : t]:
            # anchor must sit where an insertion stays inside the trigger's lookback
            lo = max(0, t - rule.lookback + 1)
            region = seq[lo : t + 1]
            if rule.anchor in region:
                seq.insert(lo + region.index(rule.anchor), rule.required)
                changed = True
                t += 1
        t += 1
    return changed


def check_sequence(seq: Sequence[str], rules: RuleSet) -> CheckResult:
    """Correct ``seq`` against ``rules`` and report complex-activity findings.

    Precede rules run before require rules, each group in file order, and
    whole passes repeat until nothing changes. Events are only moved or
    inserted, never dropped.
    """
    if not seq:
        raise ValueError("empty activity sequence")
    original = tuple(canonicalize(s, allow_unknown=True) for s in seq)
    current = list(original)
    ordered = rules.of_kind("precede") + rules.of_kind("require")
    fired: dict[str, Rule] = {}
    passes = 0
    while True:
        changed_by = []
        for rule in ordered:
            apply = _apply_precede if rule.kind == "precede" else _apply_require
            if apply(current, rule):
                changed_by.append(rule)
                fired.setdefault(rule.complex_label, rule)
        if not changed_by:
            break
        passes += 1
        if passes >= MAX_PASSES:
            pair = (changed_by[0], changed_by[1] if len(changed_by) > 1 else changed_by[0])
            raise FixpointError(pair)
    for rule in rules.of_kind("alert"):
        if rule.on in current:
            fired.setdefault(rule.complex_label, rule)
    corrected = tuple(current)
    findings = tuple(
        Finding(label, rule.ordinal, original, corrected, rule.message, rule.severity)
        for label, rule in sorted(fired.items(), key=lambda kv: kv[1].ordinal)
    )
    return CheckResult(corrected, findings, passes)


def keeps_all_events(original: Sequence[str], corrected: Sequence[str]) -> bool:
    """True when ``corrected`` holds every event of ``original`` (as a multiset)."""
    have = Counter(corrected)
    return all(have[label] >= n for label, n in Counter(original).items())


def parse_sequence(text: str) -> list[str]:
    """Split ``a -> b -> c`` (unicode arrows and commas also work) into canonical labels."""
    parts = text.replace("→", "->").replace(",", "->").split("->")
    if any(not p.strip() for p in parts):
        raise ValueError(f"malformed activity sequence {text!r}")
    return [canonicalize(p) for p in parts]


def format_sequence(seq: Sequence[str]) -> str:
    return " -> ".join(seq)


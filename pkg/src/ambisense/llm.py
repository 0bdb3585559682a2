"""Language-model sequence verification.

The model sees the configured rules and the observed sequence and must answer
in three lines (CORRECTED / COMPLEX / MESSAGE). The rule engine stays
authoritative: an answer that drops events or still violates a rule is
discarded in favour of the engine's own correction.
"""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import httpx

from .labels import UnknownLabelError, canonicalize
from .reasoner import (
    CheckResult,
    Finding,
    RuleSet,
    check_sequence,
    format_sequence,
    keeps_all_events,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "AMBIENT_LLM_KEY"
LIVE_ENV = "AMBIENT_LLM_LIVE"
DEFAULT_TIMEOUT_S = 30.0
NO_COMPLEX = "none"

DEFAULT_TEMPLATE = """\
You monitor the daily routine of an older adult through ambient sensors.
Atomic activities were detected in the order given below. Check the order
against the house rules, insert any missing step or reorder steps so that
every rule holds (never remove an observed activity), name the complex
activity you recognise, and write a short reminder for the person.

House rules:
{RULES}

SEQUENCE: {SEQUENCE}

Answer with exactly these three lines and nothing else:
CORRECTED: <activity> -> <activity> -> ...
COMPLEX: <name of the complex activity, or none>
MESSAGE: <one-sentence reminder>
"""

NO_RULES_STANZA = "(no rules configured; judge the order from common sense)"


class LlmError(RuntimeError):
    """Transport-level failure talking to the completion endpoint."""


class VerdictParseError(ValueError):
    def __init__(self, message: str, raw: str) -> None:
        self.raw = raw
        super().__init__(message)


class CompletionClient(Protocol):
    identity: str

    def complete(self, prompt: str) -> str: ...


@dataclass(frozen=True)
class LlmVerdict:
    corrected: tuple[str, ...]
    complex_label: str
    message: str
    raw: str


def build_prompt(seq: Sequence[str], rules: RuleSet, template: str = DEFAULT_TEMPLATE) -> str:
    for placeholder in ("{RULES}", "{SEQUENCE}"):
        if placeholder not in template:
            raise ValueError(f"prompt template lacks {placeholder}")
    rendered = rules.to_dsl().rstrip("\n") if len(rules) else NO_RULES_STANZA
    return template.replace("{RULES}", rendered).replace("{SEQUENCE}", format_sequence(seq))


_LINE = re.compile(r"^\W*(corrected|complex|message)\W*:\s*(.*?)\s*$", re.IGNORECASE)


def parse_verdict(response: str) -> LlmVerdict:
    found: dict[str, str] = {}
    for line in response.splitlines():
        m = _LINE.match(line)
        if m and m.group(1).lower() not in found:
            found[m.group(1).lower()] = m.group(2).strip("*` ")
    missing = [k.upper() for k in ("corrected", "complex", "message") if k not in found]
    if missing:
        raise VerdictParseError(f"response lacks {', '.join(missing)} line", response)
    parts = [p.strip() for p in found["corrected"].replace("→", "->").split("->")]
    if not parts or any(not p for p in parts):
        raise VerdictParseError("empty activity in CORRECTED line", response)
    try:
        corrected = tuple(canonicalize(p) for p in parts)
    except UnknownLabelError as exc:
        raise VerdictParseError(str(exc), response) from None
    return LlmVerdict(corrected, found["complex"], found["message"], response)


# -- clients -------------------------------------------------------------------------


def render_verdict(corrected: Sequence[str], complex_label: str, message: str) -> str:
    return f"CORRECTED: {format_sequence(corrected)}\nCOMPLEX: {complex_label}\nMESSAGE: {message}\n"


class RuleBackedClient:
    """Offline stand-in that answers by running the rule engine on the prompt's sequence."""

    identity = "mock"

    def __init__(self, rules: RuleSet) -> None:
        self.rules = rules
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        m = re.search(r"^SEQUENCE:\s*(.+)$", prompt, re.MULTILINE)
        if not m:
            return "I could not find a sequence."
        seq = [canonicalize(p, allow_unknown=True) for p in m.group(1).split("->")]
        result = check_sequence(seq, self.rules)
        if result.findings:
            first = result.findings[0]
            return render_verdict(result.corrected, first.complex_label, first.message)
        return render_verdict(result.corrected, NO_COMPLEX, "All good.")


class ScriptedClient:
    """Returns canned text, or whatever ``responder(prompt)`` produces."""

    identity = "mock"

    def __init__(self, response: str | Callable[[str], str]) -> None:
        self._respond = response if callable(response) else (lambda _prompt: response)
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        return self._respond(prompt)


class HttpChatClient:
    """Chat-completions endpoint client (POST {endpoint}/chat/completions)."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = DEFAULT_TIMEOUT_S,
        retries: int = 2,
        backoff_s: float = 1.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.retries = retries
        self.backoff_s = backoff_s
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @property
    def identity(self) -> str:
        return f"http({self.endpoint}, {self.model})"

    def __repr__(self) -> str:
        return f"HttpChatClient(endpoint={self.endpoint!r}, model={self.model!r})"

    def close(self) -> None:
        self._client.close()

    def request_body(self, prompt: str) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": "You verify activity sequences for an elderly-care assistant."},
                {"role": "user", "content": prompt},
            ],
            "temperature": 0,
        }

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        url = f"{self.endpoint}/chat/completions"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self._client.post(url, json=self.request_body(prompt), headers=headers)
            except httpx.HTTPError as exc:
                last = exc
                logger.warning("completion request to %s failed: %s", url, type(exc).__name__)
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = LlmError(f"HTTP {resp.status_code}")
                logger.warning("completion endpoint %s returned %d", url, resp.status_code)
                continue
            if resp.status_code != 200:
                raise LlmError(f"completion endpoint returned HTTP {resp.status_code}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise LlmError("unexpected completion response shape") from None
        raise LlmError(f"completion endpoint unreachable after {self.retries + 1} attempts: {last}")


# -- verification ------------------------------------------------------------------------


@dataclass(frozen=True)
class VerifiedResult:
    corrected: tuple[str, ...]
    findings: tuple[Finding, ...]
    source: str  # "llm" | "rules"
    degraded: bool = False
    discrepancy: bool = False
    verdict: LlmVerdict | None = None
    engine: CheckResult | None = field(default=None, compare=False)

    @property
    def labels(self) -> list[str]:
        return [f.complex_label for f in self.findings]


def engine_input(seq: Sequence[str]) -> tuple[str, ...]:
    return tuple(canonicalize(s, allow_unknown=True) for s in seq)


def verify_with_llm(
    seq: Sequence[str], rules: RuleSet, client: CompletionClient, template: str = DEFAULT_TEMPLATE
) -> VerifiedResult:
    """Ask the model to verify ``seq``; fall back to the rule engine when it cannot be trusted.

    Transport or parse failures give the engine result flagged ``degraded``.
    An answer that drops observed events or still needs correcting gives the
    engine result flagged ``discrepancy``.
    """
    engine = check_sequence(seq, rules)
    try:
        verdict = parse_verdict(client.complete(build_prompt(engine_input(seq), rules, template)))
    except (LlmError, VerdictParseError, httpx.HTTPError) as exc:
        logger.warning("LLM verification unavailable (%s); using rule engine result", exc)
        return VerifiedResult(engine.corrected, engine.findings, "rules", degraded=True, engine=engine)

    original = engine_input(seq)
    still_violating = check_sequence(verdict.corrected, rules).corrected != verdict.corrected
    if still_violating or not keeps_all_events(original, verdict.corrected):
        logger.warning(
            "LLM correction %r rejected (drops events or breaks a rule); using %r",
            format_sequence(verdict.corrected),
            format_sequence(engine.corrected),
        )
        return VerifiedResult(engine.corrected, engine.findings, "rules", discrepancy=True, verdict=verdict, engine=engine)

    findings = tuple(
        Finding(f.complex_label, f.rule_ordinal, f.original, verdict.corrected, f.message, f.severity)
        for f in engine.findings
    )
    label = verdict.complex_label.strip()
    if label and label.lower() != NO_COMPLEX and label not in {f.complex_label for f in findings}:
        findings += (Finding(label, None, original, verdict.corrected, verdict.message, "info"),)
    return VerifiedResult(verdict.corrected, findings, "llm", verdict=verdict, engine=engine)

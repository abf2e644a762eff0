"""Completion-service backend.

The service speaks JSON over HTTP: the request body is
``{"prompt", "max_tokens", "temperature", "stop"}`` and the response body is
``{"text"}``. Prompts come from a :class:`PromptLibrary`, a directory of text
files keyed by capability.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import httpx

from ..errors import PromptParseError, TransportError
from .base import CONSISTENT, CONTRADICTS, CheckResult, Final, Subquestion, TranscriptStep

log = logging.getLogger(__name__)

TOKEN_ENV = "HOPEDIT_API_TOKEN"
CAPABILITIES = ("cloze", "direct", "cot", "mello")


class PromptLibrary:
    def __init__(self, prompts: dict[str, str]):
        missing = [c for c in CAPABILITIES if c not in prompts]
        if missing:
            raise ValueError(f"prompt library lacks {missing}")
        self.prompts = prompts

    @classmethod
    def default(cls) -> "PromptLibrary":
        root = resources.files("hopedit.lm") / "prompts"
        return cls({c: (root / f"{c}.txt").read_text(encoding="utf-8") for c in CAPABILITIES})

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptLibrary":
        base = cls.default().prompts
        path = Path(path)
        for c in CAPABILITIES:
            f = path / f"{c}.txt"
            if f.exists():
                base[c] = f.read_text(encoding="utf-8")
        return cls(base)

    def fill(self, capability: str, **slots: str) -> str:
        text = self.prompts[capability]
        for k, v in slots.items():
            text = text.replace("{" + k + "}", v)
        return text

    def mello_header(self) -> str:
        return self.prompts["mello"].rstrip("\n") + "\n\n"


@dataclass
class Decoding:
    max_tokens: int = 128
    temperature: float = 0.0
    stop: list[str] = field(default_factory=lambda: ["\n\n"])


def _first_line(text: str) -> str:
    return text.strip().split("\n", 1)[0].strip()


def _after(marker: str, text: str) -> str | None:
    idx = text.rfind(marker)
    if idx < 0:
        return None
    return _first_line(text[idx + len(marker):])


def format_check_line(verdict: str, intermediate: str) -> str:
    word = "contradicts" if verdict == CONTRADICTS else "does not contradict"
    return f"Retrieved fact {word} to generated answer, so the intermediate answer is: {intermediate}"


def render_mello_transcript(question: str, transcript: Sequence[TranscriptStep]) -> str:
    lines = [f"Question: {question}"]
    for step in transcript:
        lines.append(f"Subquestion: {step.subquestion.text}")
        lines.append(f"Generated answer: {step.tentative_answer}")
        if step.retrieved_statement is not None:
            lines.append(f"Retrieved fact: {step.retrieved_statement}")
            lines.append(format_check_line(step.verdict or CONSISTENT, step.intermediate_answer or ""))
    return "\n".join(lines) + "\n"


class HttpBackend:
    def __init__(
        self,
        endpoint: str,
        prompts: PromptLibrary | None = None,
        decoding: Decoding | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        max_concurrency: int = 4,
        trace_path: str | Path | None = None,
        token_env: str = TOKEN_ENV,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.prompts = prompts or PromptLibrary.default()
        self.decoding = decoding or Decoding()
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.trace_path = Path(trace_path) if trace_path else None
        self._sem = threading.BoundedSemaphore(max_concurrency)
        self._trace_lock = threading.Lock()
        headers = {}
        token = os.environ.get(token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = client or httpx.Client(timeout=timeout, headers=headers)
        self.calls = 0
        self.last_attempts = 0

    # -- transport ---------------------------------------------------------
    def _trace(self, record: dict) -> None:
        if self.trace_path is None:
            return
        with self._trace_lock, open(self.trace_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")

    def complete(self, prompt: str, capability: str, stop: Sequence[str] | None = None,
                 max_tokens: int | None = None) -> str:
        body = {
            "prompt": prompt,
            "max_tokens": max_tokens or self.decoding.max_tokens,
            "temperature": self.decoding.temperature,
            "stop": list(stop if stop is not None else self.decoding.stop),
        }
        last_exc: Exception | None = None
        with self._sem:
            self.calls += 1
            for attempt in range(1, self.max_attempts + 1):
                try:
                    resp = self._client.post(self.endpoint, json=body)
                    if resp.status_code >= 500 or resp.status_code == 429:
                        raise httpx.HTTPStatusError(f"server returned {resp.status_code}",
                                                    request=resp.request, response=resp)
                    resp.raise_for_status()
                    text = resp.json()["text"]
                except (httpx.HTTPError, ValueError, KeyError) as exc:
                    last_exc = exc
                    self._trace({"capability": capability, "attempt": attempt, "request": body,
                                 "error": str(exc)})
                    retriable = not isinstance(exc, httpx.HTTPStatusError) or (
                        exc.response.status_code >= 500 or exc.response.status_code == 429)
                    if not retriable or attempt == self.max_attempts:
                        break
                    time.sleep(self.backoff * 2 ** (attempt - 1))
                    continue
                self._trace({"capability": capability, "attempt": attempt, "request": body,
                             "response": text})
                self.last_attempts = attempt
                return text
        self.last_attempts = attempt
        raise TransportError(f"completion failed after {attempt} attempt(s): {last_exc}", attempts=attempt)

    # -- capabilities ------------------------------------------------------
    def answer_cloze(self, prompt: str) -> str:
        raw = self.complete(self.prompts.fill("cloze", query=prompt), "cloze", stop=["\n"])
        ans = _first_line(raw)
        if not ans:
            raise PromptParseError("empty cloze answer", raw)
        return ans

    def answer_multihop(self, question: str, mode: str = "direct") -> str:
        if mode == "cot":
            raw = self.complete(self.prompts.fill("cot", question=question), "cot")
            ans = _after("Answer:", raw)
        else:
            raw = self.complete(self.prompts.fill("direct", question=question), "direct", stop=["\n"])
            ans = _first_line(raw)
        if not ans:
            raise PromptParseError(f"no answer in {mode} completion", raw)
        return ans

    def propose_subquestion(self, question: str, transcript: Sequence[TranscriptStep]) -> Subquestion | Final:
        prefix = self.prompts.mello_header() + render_mello_transcript(question, transcript)
        raw = self.complete(prefix, "mello", stop=["Generated answer:"])
        final = _after("Final answer:", raw)
        if final:
            return Final(final)
        sub = _after("Subquestion:", raw)
        if not sub:
            raise PromptParseError("expected 'Subquestion:' or 'Final answer:'", raw)
        return Subquestion(sub, context=prefix + f"Subquestion: {sub}\n")

    def answer_subquestion(self, subquestion: Subquestion) -> str:
        context = subquestion.context or f"Subquestion: {subquestion.text}\n"
        raw = self.complete(context + "Generated answer:", "mello", stop=["Retrieved fact:", "\n"])
        ans = _first_line(raw)
        if not ans:
            raise PromptParseError("empty generated answer", raw)
        return ans

    def check_contradiction(self, statement: str, tentative_answer: str, subquestion: Subquestion) -> CheckResult:
        context = subquestion.context or f"Subquestion: {subquestion.text}\n"
        prompt = context + f"Generated answer: {tentative_answer}\nRetrieved fact: {statement}\n"
        raw = self.complete(prompt, "mello", stop=["\n"])
        line = _first_line(raw)
        if "does not contradict" in line:
            verdict = CONSISTENT
        elif "contradicts" in line:
            verdict = CONTRADICTS
        else:
            raise PromptParseError("no contradiction verdict", raw)
        return CheckResult(verdict, _after("intermediate answer is:", line))


def http_backend(endpoint: str, prompts: PromptLibrary | None = None, **kwargs) -> HttpBackend:
    return HttpBackend(endpoint, prompts, **kwargs)

"""Deterministic fake chat-completions server for httpx.MockTransport."""
import json
import re
import threading

import httpx

ARPEGGIO = ("C4", "E4", "G4", "C5")


def _bar(voices, number=None):
    d = {"rationale": "arpeggio", "voices": [
        {"instrument": v, "notes": [{"pitch": p, "duration": 1.0} for p in ARPEGGIO]}
        for v in voices]}
    if number is not None:
        d["bar_number"] = number
    return d


def answer(prompt: str) -> str:
    first = prompt.splitlines()[0]
    if first.startswith("You are the composer agent for bar"):
        voices = re.search(r"Use exactly these instruments: (.*?)\. ", prompt.replace("\n", " "))
        names = [v.strip() for v in voices.group(1).split(",")] if voices else ["Piano"]
        return json.dumps(_bar(names))
    if first.startswith("You are the composer agent responsible"):
        n = re.search(r"bar (\d+)", first).group(1)
        return json.dumps({"new_objective": f"Make bar {n} sing."})
    if first.startswith("You are a music critic"):
        return json.dumps({"score": 0.6, "justification": "bar 1: fine"})
    if "reviewing bar" in first:
        return json.dumps({"musical_quality": 0.7, "objective_alignment": 0.6,
                           "swarm_cooperation": 0.5, "innovation_value": 0.4,
                           "suggestions": "keep going"})
    if "Your current personality" in first:
        return json.dumps({"deltas": {"risk_taking": 0.05}})
    if first.startswith("Compose a complete piece"):
        n = int(re.search(r"exactly (\d+) bars", first).group(1))
        return json.dumps({"metadata": {"key": "C major", "time_signature": [4, 4],
                                        "tempo_bpm": 120},
                           "bars": [_bar(["Piano"], i) for i in range(1, n + 1)]})
    return "{}"


class FakeLLM:
    """faults maps a regex over the prompt's first line to 'malformed', 'error' or 'timeout'."""

    def __init__(self, faults=None):
        self.faults = dict(faults or {})
        self.calls = 0
        self.lock = threading.Lock()

    def __call__(self, request: httpx.Request) -> httpx.Response:
        with self.lock:
            self.calls += 1
        prompt = json.loads(request.content)["messages"][0]["content"]
        first = prompt.splitlines()[0]
        for pattern, kind in self.faults.items():
            if re.search(pattern, first):
                if kind == "malformed":
                    return self._reply("Here you go: {not json at all")
                if kind == "error":
                    return httpx.Response(500, text="overloaded")
                if kind == "timeout":
                    raise httpx.ReadTimeout("slow", request=request)
        return self._reply(answer(prompt))

    @staticmethod
    def _reply(content):
        return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})

    def transport(self):
        return httpx.MockTransport(self)

"""Edit-distance scoring: CER over characters, WER over whitespace words.

Aggregates are total edits divided by total reference length (weighted,
not a mean of per-utterance rates).
"""

from __future__ import annotations

import json
from dataclasses import dataclass


def edit_distance(ref, hyp):
    """Unit-cost Levenshtein distance between two token sequences."""
    n, m = len(ref), len(hyp)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        r = ref[i - 1]
        for j in range(1, m + 1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (r != hyp[j - 1]),
            )
        prev = cur
    return prev[m]


@dataclass
class UtteranceScore:
    utt_id: str
    char_edits: int
    char_len: int
    word_edits: int
    word_len: int

    @property
    def cer(self):
        return self.char_edits / self.char_len if self.char_len else 0.0

    @property
    def wer(self):
        return self.word_edits / self.word_len if self.word_len else 0.0


@dataclass
class ScoreReport:
    per_utt: list

    @property
    def cer(self):
        total = sum(u.char_len for u in self.per_utt)
        return sum(u.char_edits for u in self.per_utt) / total if total else 0.0

    @property
    def wer(self):
        total = sum(u.word_len for u in self.per_utt)
        return sum(u.word_edits for u in self.per_utt) / total if total else 0.0

    def to_jsonl(self):
        lines = []
        for u in self.per_utt:
            lines.append(json.dumps({
                "utt_id": u.utt_id,
                "char_edits": u.char_edits, "char_len": u.char_len, "cer": round(u.cer, 6),
                "word_edits": u.word_edits, "word_len": u.word_len, "wer": round(u.wer, 6),
            }, sort_keys=True))
        lines.append(json.dumps({
            "aggregate": True, "n_utts": len(self.per_utt),
            "cer": round(self.cer, 6), "wer": round(self.wer, 6),
        }, sort_keys=True))
        return "\n".join(lines) + "\n"


class MissingHypothesisError(KeyError):
    pass


def score(entries, hypotheses):
    """Score {utt_id: hypothesis text} against manifest entries.

    entries: iterable with .utt_id and .transcript.
    Raises MissingHypothesisError listing every reference id without a
    hypothesis.
    """
    entries = list(entries)
    missing = [e.utt_id for e in entries if e.utt_id not in hypotheses]
    if missing:
        raise MissingHypothesisError(f"no hypothesis for utterances: {', '.join(sorted(missing))}")
    per_utt = []
    for e in entries:
        hyp = hypotheses[e.utt_id]
        per_utt.append(UtteranceScore(
            utt_id=e.utt_id,
            char_edits=edit_distance(list(e.transcript), list(hyp)),
            char_len=len(e.transcript),
            word_edits=edit_distance(e.transcript.split(), hyp.split()),
            word_len=len(e.transcript.split()),
        ))
    return ScoreReport(per_utt)

"""Attention aggregation and word-level highlight reports.

The aggregation rule (fixed, and named in the JSON output): attention
received by a word is the column mean of a row-stochastic map (how much
weight the word collects over all query positions); per head, take the
max over layers; average that across heads; normalize so the strongest
word has weight 1.
"""

from __future__ import annotations

import html as _html
import json
from dataclasses import dataclass

import numpy as np

from .model import AttentionRecord
from .text import TokenSequence

AGGREGATION_RULE = ("received=column-mean; max over layers per head; "
                    "mean over heads; max-normalized (v1)")

FORMATS = ("ansi", "html", "json")


class FormatError(ValueError):
    pass


@dataclass
class WordAttribution:
    word: str
    weight: float   # in [0, 1], max-normalized within the sentence
    rank: int       # 1 = most attended


def received_attention(record: AttentionRecord) -> list[list[np.ndarray]]:
    """Per layer and head, the length-N vector of attention each word
    receives: the column mean of the N x N map. Each vector sums to 1."""
    return [[m.mean(axis=0) for m in layer] for layer in record.maps]


def aggregate(record: AttentionRecord, words: list[str]) -> list[WordAttribution]:
    """Fold a record into one weight per word (see AGGREGATION_RULE).
    Ranks order by descending weight, earlier position first on ties.
    A record with no attention layers gets uniform weights."""
    n = len(words)
    if record.maps:
        received = received_attention(record)
        num_heads = record.num_heads
        per_head = np.empty((num_heads, n))
        for h in range(num_heads):
            per_head[h] = np.max([vecs[h] for vecs in received], axis=0)
        weights = per_head.mean(axis=0)
        weights = weights / weights.max()
    else:
        weights = np.ones(n)
    order = sorted(range(n), key=lambda j: (-weights[j], j))
    ranks = [0] * n
    for r, j in enumerate(order, start=1):
        ranks[j] = r
    return [WordAttribution(word=words[j], weight=float(weights[j]), rank=ranks[j])
            for j in range(n)]


def render_report(seq: TokenSequence, attributions: list[WordAttribution],
                  score: float, fmt: str) -> str:
    """One highlight report for one sentence.

    ansi: 256-color terminal highlighting; html: standalone document with
    background opacity proportional to weight; json: machine-readable
    attribution list. Unknown format names raise FormatError."""
    if len(attributions) != seq.length:
        raise ValueError("attributions are not aligned with the sequence")
    if fmt == "json":
        return json.dumps({
            "words": [a.word for a in attributions],
            "weights": [a.weight for a in attributions],
            "ranks": [a.rank for a in attributions],
            "score": score,
            "aggregation_rule": AGGREGATION_RULE,
        })
    if fmt == "ansi":
        return _render_ansi(attributions, score)
    if fmt == "html":
        return _render_html(attributions, score)
    raise FormatError(f"unknown report format {fmt!r} (expected one of {FORMATS})")


def _render_ansi(attributions, score) -> str:
    parts = []
    for a in attributions:
        if a.weight <= 0.0:
            parts.append(a.word)
            continue
        # pale-yellow-to-red ramp on the 256-color cube, black foreground
        level = min(5, int(round(a.weight * 5)))
        color = 226 - 6 * level
        parts.append(f"\x1b[48;5;{color}m\x1b[30m{a.word}\x1b[0m")
    return f"score={score:.4f}  " + " ".join(parts)


def _span(a: WordAttribution) -> str:
    word = _html.escape(a.word)
    if a.weight <= 0.0:
        return f"<span>{word}</span>"
    return (f'<span style="background: rgba(255, 140, 0, {a.weight:.4f})" '
            f'title="weight {a.weight:.4f}, rank {a.rank}">{word}</span>')


def _render_html(attributions, score) -> str:
    spans = "\n".join(_span(a) for a in attributions)
    return f"""<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>attention report</title>
<style>
body {{ font-family: sans-serif; margin: 2em; }}
.sentence span {{ padding: 2px 3px; border-radius: 3px; }}
.score {{ color: #555; margin-top: 1em; }}
</style>
</head>
<body>
<div class="sentence">
{spans}
</div>
<div class="score">prediction score: {score:.4f}</div>
</body>
</html>
"""


def export_model_view(record: AttentionRecord, words=None) -> str:
    """Bird's-eye HTML grid: one N x N heatmap per (layer, head) cell,
    layers as rows and heads as columns. Self-contained (inline styles,
    no external assets)."""
    if not record.maps:
        return ("<!DOCTYPE html>\n<html><body><p>This model has no "
                "attention layers (#L = 0); there are no maps to show.</p>"
                "</body></html>\n")
    rows = []
    for li, layer in enumerate(record.maps):
        cells = []
        for hi, m in enumerate(layer):
            cells.append(
                f'<td><div class="label">layer {li} / head {hi}</div>'
                f"{_heatmap(m, words)}</td>")
        rows.append("<tr>" + "".join(cells) + "</tr>")
    body = "\n".join(rows)
    return f"""<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>attention model view</title>
<style>
table.grid > tbody > tr > td {{ padding: 6px; vertical-align: top; }}
table.map {{ border-collapse: collapse; }}
table.map td {{ width: 10px; height: 10px; padding: 0; }}
.label {{ font: 10px sans-serif; color: #333; margin-bottom: 2px; }}
</style>
</head>
<body>
<table class="grid">
{body}
</table>
</body>
</html>
"""


def _heatmap(m: np.ndarray, words=None) -> str:
    peak = float(m.max()) or 1.0
    rows = []
    for i in range(m.shape[0]):
        cells = []
        for j in range(m.shape[1]):
            alpha = m[i, j] / peak
            tip = f"{m[i, j]:.3f}"
            if words is not None:
                tip = f"{words[i]} -> {words[j]}: {tip}"
            cells.append(f'<td style="background: rgba(20, 60, 200, '
                         f'{alpha:.3f})" title="{_html.escape(tip)}"></td>')
        rows.append("<tr>" + "".join(cells) + "</tr>")
    return '<table class="map">' + "".join(rows) + "</table>"

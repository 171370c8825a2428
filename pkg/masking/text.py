"""Whole-sentence text masking."""
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from tensor import Rng

from .plan import MaskingError

SENTENCE_END = frozenset(b'.?!')
WHITESPACE = frozenset(b' \t\r\n')


class SentenceSpans(BaseModel):
    """Half-open (start, end) ranges partitioning the non-padding tokens of a sequence of ``length`` ids."""
    spans: List[Tuple[int, int]]
    length: int

    def check(self):
        previous_end = 0
        for start, end in self.spans:
            if start < previous_end:
                raise MaskingError(f'sentence spans overlap or are out of order: {self.spans}')
            if not 0 <= start < end <= self.length:
                raise MaskingError(f'span ({start}, {end}) is empty or outside a sequence of length {self.length}')
            previous_end = end

    def __len__(self) -> int:
        return len(self.spans)


def sentence_spans(ids: Sequence[int], pad_id: int = 0) -> SentenceSpans:
    """Splits after every '.', '?' or '!'; a trailing whitespace-only piece joins the last sentence."""
    ids = np.asarray(ids)
    content = np.flatnonzero(ids == pad_id)
    stop = int(content[0]) if content.size else len(ids)
    spans: List[Tuple[int, int]] = []
    start = 0
    for i in range(stop):
        if int(ids[i]) in SENTENCE_END:
            spans.append((start, i + 1))
            start = i + 1
    if start < stop:
        if spans and all(int(t) in WHITESPACE for t in ids[start:stop]):
            spans[-1] = (spans[-1][0], stop)
        else:
            spans.append((start, stop))
    return SentenceSpans(spans=spans, length=len(ids))


def mask_text_sentences(spans: SentenceSpans, p_mask: float, rng: Rng) -> np.ndarray:
    """Visibility per token: each sentence is hidden as a whole with probability ``p_mask``; padding is never
    visible."""
    if not 0.0 <= p_mask <= 1.0:
        raise MaskingError(f'sentence mask probability must lie in [0, 1], got {p_mask}')
    spans.check()
    visible = np.zeros(spans.length, dtype=bool)
    hidden = rng.bernoulli(p_mask, size=len(spans))
    for (start, end), masked in zip(spans.spans, hidden):
        if not masked:
            visible[start:end] = True
    return visible

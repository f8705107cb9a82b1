import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from app.domain.translator import Prompt, TranslatorModel, check_prompt
from app.errors import ConfigurationError

log = logging.getLogger("decoding")


@dataclass
class Hypothesis:
    tokens: tuple
    score: float
    finished: bool = True

    @property
    def truncated(self) -> bool:
        return not self.finished

    @property
    def normalized_score(self) -> float:
        return self.score / max(len(self.tokens), 1)


def _memory(z, prompt: Prompt, model: TranslatorModel, placeholder_id):
    check_prompt(prompt, placeholder_id)
    if z.dim() == 2:
        z = z.unsqueeze(0)
    prompt_ids = torch.tensor(prompt.tokens, dtype=torch.long, device=z.device)
    return model.encode(z, prompt_ids, prompt.placeholder_position)


def _next_log_probs(model, memory, prefixes, bos_id) -> list[list[float]]:
    decoder_input = torch.tensor([(bos_id,) + tuple(p) for p in prefixes], dtype=torch.long, device=memory.device)
    logits = model.decode(memory.expand(len(prefixes), -1, -1), decoder_input)[:, -1]
    return F.log_softmax(logits.double(), dim=-1).tolist()


@torch.no_grad()
def greedy(z, prompt: Prompt, model: TranslatorModel, max_len, bos_id=1, eos_id=2, placeholder_id=5) -> Hypothesis:
    model.eval()
    memory = _memory(z, prompt, model, placeholder_id)
    tokens, score = [], 0.0
    for _ in range(max_len):
        log_probs = _next_log_probs(model, memory, [tokens], bos_id)[0]
        # First maximal index wins, i.e. the lower token id on ties
        best = max(range(len(log_probs)), key=lambda v: (log_probs[v], -v))
        tokens.append(best)
        score += log_probs[best]
        if best == eos_id:
            return Hypothesis(tuple(tokens), score, finished=True)
    return Hypothesis(tuple(tokens), score, finished=False)


@torch.no_grad()
def beam_search(z, prompt: Prompt, model: TranslatorModel, width=5, max_len=24, bos_id=1, eos_id=2, placeholder_id=5) -> Hypothesis:
    """Length-normalised beam search.

    Each step keeps the top `width` extensions by cumulative log-probability
    (ties go to the lexicographically lower sequence). A kept extension that
    ends in eos, or reaches max_len, is finalised and shrinks the beam by one.
    The result is the finished hypothesis with the best score / length; a
    hypothesis cut off at max_len is returned only when none reached eos.
    """
    if width < 1:
        raise ConfigurationError(f"Beam width must be >= 1, got {width}")
    if max_len < 1:
        raise ConfigurationError(f"max_len must be >= 1, got {max_len}")
    model.eval()
    memory = _memory(z, prompt, model, placeholder_id)

    live = [Hypothesis((), 0.0, finished=False)]
    final: list[Hypothesis] = []
    while live and width > 0:
        log_probs = _next_log_probs(model, memory, [h.tokens for h in live], bos_id)
        candidates = [
            Hypothesis(h.tokens + (v,), h.score + lp[v], finished=False)
            for h, lp in zip(live, log_probs)
            for v in range(len(lp))
        ]
        candidates.sort(key=lambda h: (-h.score, h.tokens))
        live = []
        for h in candidates[:width]:
            if h.tokens[-1] == eos_id:
                final.append(Hypothesis(h.tokens, h.score, finished=True))
                width -= 1
            elif len(h.tokens) >= max_len:
                final.append(h)
                width -= 1
            else:
                live.append(h)

    finished = [h for h in final if h.finished]
    best = min(finished or final, key=lambda h: (-h.normalized_score, h.tokens))
    if best.truncated:
        log.warning(f"Beam search hit max_len={max_len} without eos; returning a truncated hypothesis")
    return best

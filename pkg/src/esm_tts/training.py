"""Synthetic regression task, plain gradient-descent trainer and the
end-to-end gradient check."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numeric as nc
from .config import RunConfig
from .errors import DivergedLoss
from .model import ToyModel, pipeline_backward, pipeline_forward
from .tokens import (
    Language,
    LabelSpan,
    Phonology,
    TokenInventory,
    TokenKind,
    Utterance,
    build_inventory,
    compute_language_mask,
    compute_phonology_mask,
    parse_utterance,
)

log = logging.getLogger(__name__)

SAMPLE_LINE = (
    "corpus=mixed ;; lang=cn phon=cnen : br:/sil/ cn:n cn:i cn:t3 cn:cb cn:h cn:ao cn:t3 br:#1 "
    "| lang=cn phon=cnen : en:HH en:AH en:stress1 en:sylb en:L en:OW en:stress0 en:lia br:#2 "
    "| lang=cn phon=cnen : cn:sh cn:iii cn:t4 br:/sil/"
)


def sample_utterance(inv: TokenInventory | None = None) -> Utterance:
    """A mixed-lingual utterance containing every token kind."""
    return parse_utterance(SAMPLE_LINE, inv or build_inventory())


def _by_kind(inv: TokenInventory) -> dict[TokenKind, list[int]]:
    out: dict[TokenKind, list[int]] = {k: [] for k in TokenKind}
    for t in inv:
        out[t.kind].append(t.id)
    return out


def random_utterance(rng: np.random.Generator, inv: TokenInventory, max_len: int = 12) -> Utterance:
    """Random utterance of 1-3 spans; each span is one or two syllables and a
    closing prosodic break. Labels follow the corpus conventions: Mandarin
    spans (Mandarin, none/Chinese-English), English spans either
    mixed-lingual (Mandarin, Chinese-English) or plain (English, Standard-English)."""
    kinds = _by_kind(inv)
    pick = lambda kind: int(rng.choice(kinds[kind]))  # noqa: E731
    n_spans = int(rng.integers(1, 4))
    mixed = bool(rng.integers(0, 2))
    tokens: list[int] = []
    spans: list[LabelSpan] = []
    for _ in range(n_spans):
        english = bool(rng.integers(0, 2))
        seg: list[int] = []
        for _ in range(int(rng.integers(1, 3))):
            if english:
                seg += [pick(TokenKind.EnglishPhoneme), pick(TokenKind.EnglishStress)]
                seg.append(pick(TokenKind.EnglishSyllableBoundary if rng.integers(0, 2) else TokenKind.EnglishLiaison))
            else:
                seg += [pick(TokenKind.MandarinPhoneme), pick(TokenKind.MandarinTone), pick(TokenKind.MandarinCharBoundary)]
        seg.append(pick(TokenKind.ProsodicBreak))
        if len(tokens) + len(seg) > max_len:
            break
        start = len(tokens)
        tokens += seg
        if english and not mixed:
            lang, phon = Language.English, Phonology.StandardEnglish
        elif english or mixed:
            lang, phon = Language.Mandarin, Phonology.ChineseEnglish
        else:
            lang, phon = Language.Mandarin, Phonology.NONE
        spans.append(LabelSpan(start, len(tokens), lang, phon))
    if not spans:
        return random_utterance(rng, inv, max_len)
    return Utterance(tuple(tokens), tuple(spans))


@dataclass
class SyntheticTask:
    """Per-token regression targets::

        target[t] = token_vec[id] + speaker_vec[s]
                    + language_vec[span language]   at break tokens
                    + phonology_vec[span phonology] at English stress/boundary/liaison tokens

    Chinese-English and Standard-English get different phonology vectors unless
    ``ignore_phonology`` is set, in which case both labels share one vector.
    """

    utterances: list[Utterance]
    speakers: list[int]
    targets: list[np.ndarray]
    seed: int
    ignore_phonology: bool

    @classmethod
    def generate(cls, config: RunConfig, inv: TokenInventory | None = None, seed: int | None = None) -> "SyntheticTask":
        inv = inv or build_inventory()
        seed = config.seed if seed is None else seed
        rng = np.random.default_rng([seed, 0x5EED])
        d = config.d_model
        token_vec = rng.normal(0.0, 0.5, (len(inv), d))
        speaker_vec = rng.normal(0.0, 0.5, (config.n_speakers, d))
        language_vec = {Language.Mandarin: rng.normal(0.0, 1.0, d), Language.English: rng.normal(0.0, 1.0, d)}
        ce, se = rng.normal(0.0, 1.0, d), rng.normal(0.0, 1.0, d)
        phonology_vec = {Phonology.ChineseEnglish: ce, Phonology.StandardEnglish: ce if config.ignore_phonology else se}

        utts, speakers, targets = [], [], []
        for _ in range(config.n_utterances):
            u = random_utterance(rng, inv, config.max_len)
            spk = int(rng.integers(0, config.n_speakers))
            lm = compute_language_mask(u, inv)
            pm = compute_phonology_mask(u, inv)
            y = token_vec[list(u.tokens)] + speaker_vec[spk]
            for s in u.spans:
                for t in range(s.start, s.end):
                    if lm[t]:
                        y[t] += language_vec[s.language]
                    if pm[t] and s.phonology is not Phonology.NONE:
                        y[t] += phonology_vec[s.phonology]
            utts.append(u)
            speakers.append(spk)
            targets.append(y)
        return cls(utts, speakers, targets, seed, config.ignore_phonology)


def task_loss(model: ToyModel, task: SyntheticTask, inv: TokenInventory | None = None, with_grads: bool = True):
    """Mean squared error averaged over utterances, and its gradients."""
    inv = inv or build_inventory()
    n = len(task.utterances)
    loss = 0.0
    grads = model.zero_grads() if with_grads else None
    for u, spk, y in zip(task.utterances, task.speakers, task.targets):
        res = pipeline_forward(model, u, speaker_id=spk, inv=inv)
        err = res.values - y
        loss += float((err * err).mean()) / n
        if with_grads:
            g = pipeline_backward(model, res, 2.0 * err / (err.size * n))
            for k in grads:
                grads[k] += g[k]
    return loss, grads


def train_toy(task: SyntheticTask, config: RunConfig, model: ToyModel | None = None, inv=None) -> tuple[ToyModel, list[float]]:
    """Full-batch gradient descent. Returns the trained model and the loss
    recorded before each step plus the final loss (``steps + 1`` values)."""
    model = model or ToyModel.init(config)
    params = model.named_parameters()
    losses: list[float] = []
    for step in range(config.steps + 1):
        loss, grads = task_loss(model, task, inv, with_grads=step < config.steps)
        if not np.isfinite(loss) or (losses and loss > 10.0 * losses[0]):
            raise DivergedLoss(f"step {step}: loss {loss} (initial {losses[0] if losses else None})")
        losses.append(loss)
        if step % 100 == 0:
            log.info("step %d loss %.6g", step, loss)
        if step == config.steps:
            break
        for k, arr in params.items():
            arr -= config.learning_rate * grads[k]
    return model, losses


def run_gradcheck(config: RunConfig, inv: TokenInventory | None = None) -> nc.GradCheckReport:
    """Finite-difference check of every parameter group through
    encoder -> modulators -> conditioning on the sample utterance, with loss
    ``sum(out * R)`` for a fixed random ``R``."""
    inv = inv or build_inventory()
    model = ToyModel.init(config)
    rng = np.random.default_rng(config.seed)
    # non-trivial LN affine and biases so their gradients are exercised
    for name, arr in model.named_parameters().items():
        if name.endswith(("gamma", "beta", "b_v", "b_o", "ffn_b1", "ffn_b2")):
            arr += rng.normal(0.0, 0.1, arr.shape)
    u = sample_utterance(inv)
    weight = rng.normal(size=(len(u), config.d_model))
    spk = config.n_speakers - 1

    def loss_only():
        return float((pipeline_forward(model, u, speaker_id=spk, inv=inv).values * weight).sum())

    def loss_and_grads():
        res = pipeline_forward(model, u, speaker_id=spk, inv=inv)
        return float((res.values * weight).sum()), pipeline_backward(model, res, weight)

    return nc.grad_check(
        loss_and_grads,
        model.named_parameters(),
        h=config.gradcheck_h,
        tolerance=config.gradcheck_tolerance,
        max_entries=config.gradcheck_max_entries,
        seed=config.seed,
        loss_fn=loss_only,
    )

"""Label embedding tables, per-span label control, and masked injection into
the encoder output."""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidLabel, MaskLengthMismatch, NoEnglishSpan, ShapeMismatch
from .numeric import InitSpec
from .tokens import Language, Phonology, TokenInventory, Utterance, build_inventory

SPEAKER_DIM = 64

LANGUAGE_ROWS = (Language.Mandarin, Language.English)
PHONOLOGY_ROWS = (Phonology.ChineseEnglish, Phonology.StandardEnglish)
# extrapolation base for dynamic_gain != 1
LANGUAGE_BASE = Language.Mandarin
PHONOLOGY_BASE = Phonology.ChineseEnglish


@dataclass
class EmbeddingTables:
    speaker: np.ndarray  # (n_speakers, 64)
    speaker_proj: np.ndarray  # (64, d_model)
    language: np.ndarray  # (2, d_model), rows LANGUAGE_ROWS
    phonology: np.ndarray  # (2, d_model), rows PHONOLOGY_ROWS

    def __post_init__(self):
        for name in ("speaker", "speaker_proj", "language", "phonology"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        d = self.d_model
        if self.speaker.shape[1] != self.speaker_proj.shape[0]:
            raise ShapeMismatch("speaker table width must match projection input")
        if self.language.shape != (2, d) or self.phonology.shape != (2, d):
            raise ShapeMismatch("language/phonology tables must be (2, d_model)")

    @property
    def d_model(self) -> int:
        return self.speaker_proj.shape[1]

    @classmethod
    def init(cls, d_model: int, n_speakers: int = 2, init: InitSpec | int = 0, speaker_dim: int = SPEAKER_DIM):
        init = init if isinstance(init, InitSpec) else InitSpec(int(init))
        rng = init.rng()
        return cls(
            speaker=rng.normal(0.0, 1.0, (n_speakers, speaker_dim)),
            speaker_proj=init.weight(rng, (speaker_dim, d_model), speaker_dim, d_model),
            language=rng.normal(0.0, 1.0, (2, d_model)),
            phonology=rng.normal(0.0, 1.0, (2, d_model)),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {"speaker": self.speaker, "speaker_proj": self.speaker_proj,
                "language": self.language, "phonology": self.phonology}  # fmt: skip

    def language_vector(self, label: Language) -> np.ndarray:
        try:
            return self.language[LANGUAGE_ROWS.index(Language(label))]
        except ValueError:
            raise InvalidLabel(f"no language embedding for {label!r}") from None

    def phonology_vector(self, label: Phonology) -> np.ndarray:
        label = Phonology(label)
        if label is Phonology.NONE:
            raise InvalidLabel("phonology 'none' has no embedding vector")
        return self.phonology[PHONOLOGY_ROWS.index(label)]

    def speaker_vector(self, speaker_id: int) -> np.ndarray:
        if not 0 <= speaker_id < self.speaker.shape[0]:
            raise InvalidLabel(f"unknown speaker id {speaker_id}")
        return self.speaker[speaker_id] @ self.speaker_proj


class Slots(NamedTuple):
    language_dynamic: Language
    language_static: Language
    phonology_dynamic: Phonology
    phonology_static: Phonology


@dataclass(frozen=True)
class SpanControl:
    """Label choices for one span. ``content`` is the span's language by token
    content, which is what control operations key on (labels may differ)."""

    start: int
    end: int
    content: Language
    language_dynamic: Language
    language_static: Language
    phonology_dynamic: Phonology
    phonology_static: Phonology
    dynamic_gain: float = 1.0

    def __post_init__(self):
        for name, typ in (("content", Language), ("language_dynamic", Language), ("language_static", Language),
                          ("phonology_dynamic", Phonology), ("phonology_static", Phonology)):  # fmt: skip
            try:
                object.__setattr__(self, name, typ(getattr(self, name)))
            except ValueError:
                raise InvalidLabel(f"{name}: invalid label {getattr(self, name)!r}") from None
        if (self.phonology_dynamic is Phonology.NONE) != (self.phonology_static is Phonology.NONE):
            raise InvalidLabel("phonology 'none' must apply to both dynamic and static slots")
        if not math.isfinite(self.dynamic_gain):
            raise InvalidLabel("dynamic_gain must be finite")

    @property
    def slots(self) -> Slots:
        return Slots(self.language_dynamic, self.language_static, self.phonology_dynamic, self.phonology_static)

    def with_slots(self, slots: Slots, **changes) -> "SpanControl":
        return dataclasses.replace(self, **slots._asdict(), **changes)


@dataclass(frozen=True)
class ControlSpec:
    spans: tuple[SpanControl, ...]
    line: int | None = None

    @classmethod
    def from_utterance(cls, u: Utterance, inv: TokenInventory | None = None) -> "ControlSpec":
        inv = inv or build_inventory()
        return cls(
            tuple(
                SpanControl(s.start, s.end, u.span_content(s, inv), s.language, s.language, s.phonology, s.phonology)
                for s in u.spans
            ),
            u.line,
        )

    def check_against(self, u: Utterance) -> None:
        if [(s.start, s.end) for s in self.spans] != [(s.start, s.end) for s in u.spans]:
            raise InvalidLabel("control spec spans do not match the utterance")

    def to_json(self) -> dict:
        return {
            "line": self.line,
            "spans": [
                {
                    "start": s.start,
                    "end": s.end,
                    "content": s.content.value,
                    "language_dynamic": s.language_dynamic.value,
                    "language_static": s.language_static.value,
                    "phonology_dynamic": s.phonology_dynamic.value,
                    "phonology_static": s.phonology_static.value,
                    "dynamic_gain": s.dynamic_gain,
                }
                for s in self.spans
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ControlSpec":
        try:
            spans = tuple(
                SpanControl(
                    int(s["start"]), int(s["end"]), s["content"],
                    s["language_dynamic"], s["language_static"],
                    s["phonology_dynamic"], s["phonology_static"],
                    float(s.get("dynamic_gain", 1.0)),
                )  # fmt: skip
                for s in obj["spans"]
            )
        except KeyError as e:
            raise InvalidLabel(f"control spec missing field {e}") from None
        return cls(spans, obj.get("line"))


M, E = Language.Mandarin, Language.English
CE, SE = Phonology.ChineseEnglish, Phonology.StandardEnglish

BASE_SLOTS = Slots(M, M, CE, CE)
# combination -> the slot replacements applied to the base combination
COMBINATION_REPLACEMENTS: dict[str, dict[str, object]] = {
    "a": {},
    "b": {"language_dynamic": E, "language_static": E, "phonology_dynamic": SE, "phonology_static": SE},
    "c": {"phonology_dynamic": SE},
    "d": {"phonology_static": SE},
    "e": {"language_dynamic": E},
    "f": {"language_static": E},
}


def combination_slots(name: str) -> Slots:
    try:
        return BASE_SLOTS._replace(**COMBINATION_REPLACEMENTS[name])
    except KeyError:
        raise InvalidLabel(f"unknown combination {name!r}") from None


def join_replacements(base: Slots, *names: str) -> Slots:
    """Apply several combinations' replacements on top of ``base``."""
    out = base
    for n in names:
        out = out._replace(**COMBINATION_REPLACEMENTS[n])
    return out


def apply_combination(spec: ControlSpec, name: str) -> ControlSpec:
    slots = combination_slots(name)
    return dataclasses.replace(spec, spans=tuple(s.with_slots(slots) for s in spec.spans))


class ResolvedSpan(NamedTuple):
    language_dynamic: np.ndarray
    language_static: np.ndarray
    phonology_dynamic: np.ndarray | None
    phonology_static: np.ndarray | None


def control_double(base: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Point twice as far from ``base`` as ``ref`` is, along the same direction."""
    return extrapolate(base, ref, 2.0)


def extrapolate(base: np.ndarray, ref: np.ndarray, gain: float) -> np.ndarray:
    base = np.asarray(base, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if base.shape != ref.shape:
        raise ShapeMismatch(f"{base.shape} vs {ref.shape}")
    if gain == 1.0:
        return ref.copy()
    return base + gain * (ref - base)


def resolve_label_vectors(spec: ControlSpec, tables: EmbeddingTables) -> list[ResolvedSpan]:
    """Look up the four embedding vectors of every span.

    Dynamic slots are extrapolated from the base label (Mandarin /
    Chinese-English) by the span's ``dynamic_gain``.
    """
    out = []
    for s in spec.spans:
        lang_dyn = extrapolate(tables.language_vector(LANGUAGE_BASE), tables.language_vector(s.language_dynamic),
                               s.dynamic_gain)  # fmt: skip
        lang_stat = tables.language_vector(s.language_static)
        if s.phonology_dynamic is Phonology.NONE:
            phon_dyn = phon_stat = None
        else:
            phon_dyn = extrapolate(tables.phonology_vector(PHONOLOGY_BASE), tables.phonology_vector(s.phonology_dynamic),
                                   s.dynamic_gain)  # fmt: skip
            phon_stat = tables.phonology_vector(s.phonology_static)
        out.append(ResolvedSpan(lang_dyn, lang_stat.copy(), phon_dyn, None if phon_stat is None else phon_stat.copy()))
    return out


def enhance_expressiveness(spec: ControlSpec) -> ControlSpec:
    """Double the dynamic components of plain-English spans; static slots are kept."""
    target = Slots(E, E, SE, SE)
    for s in spec.spans:
        if s.slots != target:
            raise InvalidLabel(f"span [{s.start}, {s.end}) is not labeled English/Standard-English: {s.slots}")
    return dataclasses.replace(spec, spans=tuple(dataclasses.replace(s, dynamic_gain=2.0 * s.dynamic_gain)
                                                 for s in spec.spans))  # fmt: skip


SMOOTH_TRANSITION_SLOTS = Slots(E, E, SE, CE)


def smooth_transition(spec: ControlSpec) -> ControlSpec:
    """Relabel English words embedded in Mandarin speech: English language on
    both components and Standard-English dynamic phonology, while the static
    phonology stays Chinese-English. Mandarin spans are left alone."""
    has_cn = any(s.content is M for s in spec.spans)
    targets = [s.content is E and has_cn for s in spec.spans]
    if not any(targets):
        warnings.warn("no embedded English span to transform", NoEnglishSpan, stacklevel=2)
        return spec
    return dataclasses.replace(
        spec,
        spans=tuple(s.with_slots(SMOOTH_TRANSITION_SLOTS) if t else s for s, t in zip(spec.spans, targets)),
    )


@dataclass
class ConditionedSequence:
    values: np.ndarray  # (T, d_model)
    provenance: tuple[tuple[str, ...], ...]


def condition_sequence(
    e_o: np.ndarray,
    language_mask: np.ndarray,
    phonology_mask: np.ndarray,
    tables: EmbeddingTables,
    lang_f_o: np.ndarray,
    phon_f_o: np.ndarray | None,
    speaker_id: int,
) -> ConditionedSequence:
    """``E + speaker`` everywhere, plus ESM outputs only where their mask is set.

    ``phon_f_o=None`` means no phonology injection at all.
    """
    e_o = np.asarray(e_o, dtype=np.float64)
    t, d = e_o.shape
    language_mask = np.asarray(language_mask, dtype=bool)
    phonology_mask = np.asarray(phonology_mask, dtype=bool)
    if language_mask.shape != (t,) or phonology_mask.shape != (t,):
        raise MaskLengthMismatch(f"masks must have length {t}")
    if d != tables.d_model or lang_f_o.shape != (t, d) or (phon_f_o is not None and phon_f_o.shape != (t, d)):
        raise ShapeMismatch("encoder output, tables and ESM outputs must share (T, d_model)")
    out = e_o + tables.speaker_vector(speaker_id)
    out = out + np.where(language_mask[:, None], lang_f_o, 0.0)
    if phon_f_o is None:
        phonology_mask = np.zeros(t, dtype=bool)
    else:
        out = out + np.where(phonology_mask[:, None], phon_f_o, 0.0)
    prov = tuple(
        ("speaker",) + (("language",) if lm else ()) + (("phonology",) if pm else ())
        for lm, pm in zip(language_mask, phonology_mask)
    )
    return ConditionedSequence(out, prov)


def span_rows(spec_or_spans: ControlSpec | Sequence, length: int) -> np.ndarray:
    """Index of the span owning each position."""
    spans = spec_or_spans.spans if isinstance(spec_or_spans, ControlSpec) else spec_or_spans
    owner = np.full(length, -1, dtype=int)
    for i, s in enumerate(spans):
        owner[s.start : s.end] = i
    return owner

"""Toy encoder plus the full conditioning pipeline, with its backward pass and
a JSON checkpoint format.

The pipeline for one utterance::

    E = embedding[tokens] + pe_scale * sinusoid(T, d)
    for each span: F_lang = ESM_lang(E, lang_dynamic, lang_static)
                   F_phon = ESM_phon(E, phon_dynamic, phon_static)   (unless phonology none)
    out = E + speaker + F_lang at break tokens + F_phon at English stress/boundary/liaison tokens

Both modulators see the whole of E as queries; each span keeps only its own rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nc
from .conditioning import (
    LANGUAGE_BASE,
    LANGUAGE_ROWS,
    PHONOLOGY_BASE,
    PHONOLOGY_ROWS,
    ConditionedSequence,
    ControlSpec,
    EmbeddingTables,
    condition_sequence,
    resolve_label_vectors,
)
from .config import RunConfig
from .errors import ShapeMismatch, UnknownToken
from .esm import ESMDiagnostics, ESMParams, esm_backward, esm_forward_mixed
from .tokens import (
    Phonology,
    TokenInventory,
    Utterance,
    build_inventory,
    compute_language_mask,
    compute_phonology_mask,
)

CHECKPOINT_FORMAT = "esm-tts-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ToyEncoderParams:
    embedding: np.ndarray  # (vocab, d_model)
    pe_scale: np.ndarray = field(default_factory=lambda: np.ones(1))  # shape (1,) so it can be updated in place

    def __post_init__(self):
        self.embedding = np.ascontiguousarray(self.embedding, dtype=np.float64)
        self.pe_scale = np.ascontiguousarray(self.pe_scale, dtype=np.float64).reshape(1)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"embedding": self.embedding, "pe_scale": self.pe_scale}


def toy_encode(tokens, params: ToyEncoderParams) -> np.ndarray:
    ids = np.asarray(tokens.tokens if isinstance(tokens, Utterance) else tokens, dtype=int)
    vocab, d = params.embedding.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise UnknownToken(f"token id outside embedding table of size {vocab}")
    return params.embedding[ids] + nc.positional_encoding(len(ids), d, params.pe_scale[0])


@dataclass
class ToyModel:
    config: RunConfig
    encoder: ToyEncoderParams
    tables: EmbeddingTables
    esm_language: ESMParams
    esm_phonology: ESMParams

    @classmethod
    def init(cls, config: RunConfig, vocab_size: int | None = None, seed: int | None = None) -> "ToyModel":
        seed = config.seed if seed is None else seed
        vocab_size = vocab_size or len(build_inventory())
        ss = np.random.SeedSequence(seed).spawn(4)
        seeds = [int(s.generate_state(1)[0]) for s in ss]
        d = config.d_model
        enc_init = nc.InitSpec(seeds[0])
        encoder = ToyEncoderParams(enc_init.weight(enc_init.rng(), (vocab_size, d), vocab_size, d))
        return cls(
            config,
            encoder,
            EmbeddingTables.init(d, config.n_speakers, seeds[1]),
            ESMParams.init(config.esm_config(), seeds[2]),
            ESMParams.init(config.esm_config(), seeds[3]),
        )

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Flat name -> array map; the arrays are the live parameter storage."""
        out = {}
        for prefix, group in (("encoder", self.encoder), ("tables", self.tables),
                              ("esm_language", self.esm_language), ("esm_phonology", self.esm_phonology)):  # fmt: skip
            for name, arr in group.arrays().items():
                out[f"{prefix}.{name}"] = arr
        return out

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.named_parameters().items()}

    def copy(self) -> "ToyModel":
        return load_params(self, {k: v.copy() for k, v in self.named_parameters().items()})


def load_params(template: ToyModel, values: dict[str, np.ndarray]) -> ToyModel:
    g = {k: np.asarray(v, dtype=np.float64) for k, v in values.items()}

    def pick(prefix):
        return {k.split(".", 1)[1]: v for k, v in g.items() if k.startswith(prefix + ".")}

    cfg = template.config
    return ToyModel(
        cfg,
        ToyEncoderParams(**pick("encoder")),
        EmbeddingTables(**pick("tables")),
        ESMParams(cfg.esm_config(), **pick("esm_language")),
        ESMParams(cfg.esm_config(), **pick("esm_phonology")),
    )


@dataclass
class SpanDiagnostics:
    start: int
    end: int
    language: ESMDiagnostics
    phonology: ESMDiagnostics | None


@dataclass
class PipelineResult:
    conditioned: ConditionedSequence
    e_o: np.ndarray
    language_mask: np.ndarray
    phonology_mask: np.ndarray  # effective: raw mask minus spans with phonology none
    spans: list[SpanDiagnostics]
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def values(self) -> np.ndarray:
        return self.conditioned.values


def _slot_key(which, dyn, stat, gain):
    return (which, dyn, stat, gain)


def pipeline_forward(
    model: ToyModel,
    u: Utterance,
    spec: ControlSpec | None = None,
    speaker_id: int = 0,
    inv: TokenInventory | None = None,
) -> PipelineResult:
    inv = inv or build_inventory()
    spec = spec or ControlSpec.from_utterance(u, inv)
    spec.check_against(u)
    t = len(u)
    e_o = toy_encode(u, model.encoder)
    lang_mask = compute_language_mask(u, inv)
    phon_mask = compute_phonology_mask(u, inv)
    resolved = resolve_label_vectors(spec, model.tables)

    runs: dict[tuple, tuple] = {}  # key -> (diag, slot labels, gain)
    lang_f = np.zeros((t, model.config.d_model))
    phon_f = np.zeros_like(lang_f)
    eff_phon = phon_mask.copy()
    span_diags = []
    owners: list[tuple[tuple, tuple | None]] = []
    for s, r in zip(spec.spans, resolved):
        rows = slice(s.start, s.end)
        lkey = _slot_key("language", s.language_dynamic, s.language_static, s.dynamic_gain)
        if lkey not in runs:
            runs[lkey] = esm_forward_mixed(e_o, r.language_dynamic, r.language_static, model.esm_language)[1]
        lang_f[rows] = runs[lkey].f_o[rows]
        pkey = None
        if r.phonology_dynamic is None:
            eff_phon[rows] = False
        else:
            pkey = _slot_key("phonology", s.phonology_dynamic, s.phonology_static, s.dynamic_gain)
            if pkey not in runs:
                runs[pkey] = esm_forward_mixed(e_o, r.phonology_dynamic, r.phonology_static, model.esm_phonology)[1]
            phon_f[rows] = runs[pkey].f_o[rows]
        owners.append((lkey, pkey))
        span_diags.append(SpanDiagnostics(s.start, s.end, runs[lkey], runs[pkey] if pkey else None))

    cond = condition_sequence(e_o, lang_mask, eff_phon, model.tables, lang_f, phon_f, speaker_id)
    cache = dict(runs=runs, owners=owners, spec=spec, tokens=np.asarray(u.tokens), speaker_id=speaker_id)
    return PipelineResult(cond, e_o, lang_mask, eff_phon, span_diags, cache)


def _scatter_table_grad(d_table, rows, label, d_vec, gain, base_label, dynamic):
    i = rows.index(label)
    if not dynamic or gain == 1.0:
        d_table[i] += d_vec
    else:
        d_table[i] += gain * d_vec
        d_table[rows.index(base_label)] += (1.0 - gain) * d_vec


def pipeline_backward(model: ToyModel, res: PipelineResult, d_out: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every entry of ``model.named_parameters()``,
    given ``d_out`` = dLoss/d(conditioned values)."""
    c = res.cache
    if d_out.shape != res.values.shape:
        raise ShapeMismatch("upstream gradient shape")
    grads = model.zero_grads()
    tables = model.tables
    spk = c["speaker_id"]

    d_e = d_out.copy()
    d_spk_vec = d_out.sum(axis=0)
    grads["tables.speaker"][spk] += tables.speaker_proj @ d_spk_vec
    grads["tables.speaker_proj"] += np.outer(tables.speaker[spk], d_spk_vec)

    # upstream gradient per modulator run, restricted to rows where it was injected
    d_runs = {key: np.zeros_like(d_out) for key in c["runs"]}
    for s, (lkey, pkey) in zip(c["spec"].spans, c["owners"]):
        rows = np.zeros(len(d_out), dtype=bool)
        rows[s.start : s.end] = True
        d_runs[lkey][rows & res.language_mask] += d_out[rows & res.language_mask]
        if pkey is not None:
            d_runs[pkey][rows & res.phonology_mask] += d_out[rows & res.phonology_mask]

    for key, d_f in d_runs.items():
        if not d_f.any():
            continue
        which, dyn, stat, gain = key
        diag = c["runs"][key]
        params = model.esm_language if which == "language" else model.esm_phonology
        d_e_run, d_dyn, d_stat, g = esm_backward(d_f, diag, params)
        d_e += d_e_run
        prefix = f"esm_{which}."
        for name, arr in g.items():
            grads[prefix + name] += arr
        if which == "language":
            tbl, rows_lbl, base = grads["tables.language"], LANGUAGE_ROWS, LANGUAGE_BASE
        else:
            tbl, rows_lbl, base = grads["tables.phonology"], PHONOLOGY_ROWS, PHONOLOGY_BASE
        _scatter_table_grad(tbl, rows_lbl, dyn, d_dyn, gain, base, dynamic=True)
        _scatter_table_grad(tbl, rows_lbl, stat, d_stat, gain, base, dynamic=False)

    np.add.at(grads["encoder.embedding"], c["tokens"], d_e)
    grads["encoder.pe_scale"][0] += float((d_e * nc.sinusoid_table(*d_e.shape)).sum())
    return grads


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(model: ToyModel, path: str | Path) -> None:
    """JSON: {format, version, config, params: {name: {shape, values (row-major)}}}."""
    obj = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": {
            name: {"shape": list(arr.shape), "values": arr.reshape(-1).tolist()}
            for name, arr in model.named_parameters().items()
        },
    }
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ToyModel:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    config = RunConfig.from_dict(obj["config"])
    values = {
        name: np.asarray(p["values"], dtype=np.float64).reshape(p["shape"]) for name, p in obj["params"].items()
    }
    vocab = values["encoder.embedding"].shape[0]
    template = ToyModel.init(config, vocab_size=vocab)
    expected = {k: v.shape for k, v in template.named_parameters().items()}
    got = {k: v.shape for k, v in values.items()}
    if expected != got:
        raise ShapeMismatch(f"{path}: parameter shapes do not match config")
    return load_params(template, values)


def phonology_label_gap(model: ToyModel, u: Utterance, inv: TokenInventory | None = None, speaker_id: int = 0) -> float:
    """Norm of the output difference between Chinese-English and
    Standard-English phonology labels (both slots) on ``u``."""
    inv = inv or build_inventory()
    base = ControlSpec.from_utterance(u, inv)
    outs = []
    for label in (Phonology.ChineseEnglish, Phonology.StandardEnglish):
        spans = tuple(
            s.with_slots(s.slots._replace(phonology_dynamic=label, phonology_static=label))
            if s.phonology_dynamic is not Phonology.NONE
            else s
            for s in base.spans
        )
        outs.append(pipeline_forward(model, u, ControlSpec(spans, base.line), speaker_id, inv).values)
    return float(np.linalg.norm(outs[0] - outs[1]))

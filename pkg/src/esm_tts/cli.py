"""Command-line entry point: ``esm-tts {inventory,control,condition,gradcheck,train-toy}``.

Failures print a one-line JSON error report on stderr and exit with status 2;
``gradcheck`` exits 1 when the tolerance is exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .conditioning import COMBINATION_REPLACEMENTS, ControlSpec, apply_combination, enhance_expressiveness, smooth_transition
from .config import RunConfig
from .errors import DivergedLoss, InvalidLabel, NoEnglishSpan, ParseError, ShapeMismatch
from .model import ToyModel, load_checkpoint, pipeline_forward, save_checkpoint
from .tokens import build_inventory, parse_file
from .training import SyntheticTask, run_gradcheck, train_toy

CONTROL_FORMAT = "esm-tts-control"
CONTROL_VERSION = 1

log = logging.getLogger("esm_tts")


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _matrix(a: np.ndarray) -> list:
    return a.tolist()


def cmd_inventory(args) -> int:
    text = build_inventory().to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_control(args) -> int:
    inv = build_inventory()
    specs = []
    for u in parse_file(args.input, inv):
        spec = ControlSpec.from_utterance(u, inv)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NoEnglishSpan)
            spec = enhance_expressiveness(spec) if args.mode == "enhance" else smooth_transition(spec)
        for w in caught:
            log.warning("line %s: %s", u.line, w.message)
        specs.append(spec.to_json())
    doc = {"format": CONTROL_FORMAT, "version": CONTROL_VERSION, "mode": args.mode, "utterances": specs}
    text = json.dumps(doc, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def load_control_file(path) -> list[ControlSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CONTROL_FORMAT or doc.get("version") != CONTROL_VERSION:
        raise InvalidLabel(f"{path}: not a version-{CONTROL_VERSION} {CONTROL_FORMAT} file")
    return [ControlSpec.from_json(s) for s in doc["utterances"]]


def cmd_condition(args) -> int:
    inv = build_inventory()
    model = load_checkpoint(args.ckpt) if args.ckpt else ToyModel.init(_config(args))
    utts = parse_file(args.input, inv)
    specs = load_control_file(args.control) if args.control else None
    if specs is not None and len(specs) != len(utts):
        raise InvalidLabel(f"control file has {len(specs)} utterances, input has {len(utts)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    conditioned, components, combos = [], [], []
    alpha_rows = []
    for i, u in enumerate(utts):
        spec = specs[i] if specs is not None else ControlSpec.from_utterance(u, inv)
        if args.combo:
            spec = apply_combination(spec, args.combo)
        res = pipeline_forward(model, u, spec, args.speaker, inv)
        lang_f = np.zeros_like(res.values)
        phon_f = np.zeros_like(res.values)
        span_norms = []
        for j, sd in enumerate(res.spans):
            rows = slice(sd.start, sd.end)
            lang_f[rows] = sd.language.f_o[rows]
            entry = {"span": j, "start": sd.start, "end": sd.end}
            for name, diag in (("language", sd.language), ("phonology", sd.phonology)):
                if diag is None:
                    continue
                if name == "phonology":
                    phon_f[rows] = diag.f_o[rows]
                entry[name] = {
                    "static_norm": float(np.linalg.norm(diag.static)),
                    "dynamic_norm": np.linalg.norm(diag.dynamic[rows], axis=1).tolist(),
                    "degenerate_alpha": int(diag.degenerate[rows].sum()),
                }
                for t in range(sd.start, sd.end):
                    for h in range(diag.alpha.shape[1]):
                        alpha_rows.append([i, name, j, t, h, repr(float(diag.alpha[t, h]))])
            span_norms.append(entry)
        conditioned.append(
            {
                "line": u.line,
                "control": spec.to_json(),
                "values": _matrix(res.values),
                "language_f_o": _matrix(lang_f),
                "phonology_f_o": _matrix(phon_f),
                "language_mask": res.language_mask.astype(int).tolist(),
                "phonology_mask": res.phonology_mask.astype(int).tolist(),
                "provenance": [list(p) for p in res.conditioned.provenance],
            }
        )
        components.append({"line": u.line, "spans": span_norms})
        base = ControlSpec.from_utterance(u, inv)
        combos.append(
            {
                "line": u.line,
                "outputs": {
                    c: _matrix(pipeline_forward(model, u, apply_combination(base, c), args.speaker, inv).values)
                    for c in COMBINATION_REPLACEMENTS
                },
            }
        )

    _write_json(out / "conditioned.json", {"speaker": args.speaker, "combo": args.combo, "utterances": conditioned})
    _write_json(out / "components.json", {"utterances": components})
    _write_json(out / "combinations.json", {"utterances": combos})
    with open(out / "alpha.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["utterance", "esm", "span", "token_index", "head", "alpha"])
        w.writerows(alpha_rows)
    print(f"wrote {len(utts)} utterances to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    report = run_gradcheck(cfg)
    for name, err in report.per_param.items():
        print(f"{name:32s} {err:.3e}")
    status = "PASS" if report.passed else "FAIL"
    print(f"max relative error {report.max_rel_error:.3e} over {report.n_checked} entries "
          f"(tolerance {report.tolerance:g}): {status}")  # fmt: skip
    return 0 if report.passed else 1


def cmd_train_toy(args) -> int:
    cfg = _config(args)
    task = SyntheticTask.generate(cfg)
    model, losses = train_toy(task, cfg)
    out = Path(args.out or cfg.output_path or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "losses.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss"])
        w.writerows([i, repr(l)] for i, l in enumerate(losses))
    save_checkpoint(model, out / "model.json")
    ratio = losses[-1] / losses[0] if losses[0] else float("nan")
    print(f"initial loss {losses[0]:.6g} final loss {losses[-1]:.6g} ratio {ratio:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esm-tts", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("inventory", help="write the token inventory as CSV (symbol,kind,id)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_inventory)

    s = sub.add_parser("control", help="emit control specs for an annotated utterance file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--mode", choices=["enhance", "smooth-transition"], required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_control)

    s = sub.add_parser("condition", help="run the conditioning pipeline and dump diagnostics")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--combo", choices=sorted(COMBINATION_REPLACEMENTS))
    s.add_argument("--control", help="control-spec JSON produced by `control`")
    s.add_argument("--speaker", type=int, default=0)
    s.set_defaults(func=cmd_condition)

    s = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train-toy", help="train on the synthetic task")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ParseError, ShapeMismatch, InvalidLabel, DivergedLoss, ValueError, KeyError, OSError) as e:
        report = {"error": type(e).__name__, "message": str(e)}
        if isinstance(e, ParseError):
            report.update(line=e.line, column=e.column, message=e.message)
        print(json.dumps(report), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point for the full pipeline.

Subcommands: ingest, mix, stats, generate, train, fit, search, report.
Configuration is a single TOML file; every artifact written under the
output directory embeds the config digest and tool version. Failures exit
nonzero with a machine-readable error JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import tomli

from . import __version__
from . import corpus as corpus_mod
from . import mixsearch, scaling, stats, surrogate, svgreport, synthgen
from .tokenize import get_tokenizer

REPORT_KINDS = (
    "scaling_curves", "irreducible_bar", "ratio_heatmap", "zipf", "kl_bar",
    "token_loss",
)


def _fail(code: str, message: str, details=None) -> int:
    payload = {"error": code, "message": message}
    if details is not None:
        payload["details"] = details
    print(json.dumps(payload), file=sys.stderr)
    return 1


def config_digest(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode()
    ).hexdigest()


def load_config(path: str, seed_override: Optional[int] = None) -> dict:
    with open(path, "rb") as fh:
        config = tomli.load(fh)
    # env interpolation for secrets only: values of the form "env:VAR"
    gen = config.get("generation", {})
    for key, val in list(gen.items()):
        if isinstance(val, str) and val.startswith("env:"):
            gen[key] = os.environ.get(val[4:], "")
    if seed_override is not None:
        config["seed"] = seed_override
    return config


def validate_config(config: dict) -> List[str]:
    """Collect every violation rather than stopping at the first."""
    violations = []
    corpora = config.get("corpora", [])
    labels = [c.get("label") for c in corpora]
    if len(set(labels)) != len(labels):
        violations.append("corpora labels not distinct")
    for c in corpora:
        for field in ("label", "path", "format"):
            if field not in c:
                violations.append(f"corpus entry missing {field!r}")
        if "path" in c and not Path(c["path"]).exists():
            violations.append(f"corpus path does not exist: {c['path']}")
    for mx in config.get("mixtures", []):
        comps = mx.get("components", {})
        total = sum(comps.values())
        if abs(total - 1.0) > corpus_mod.FRACTION_TOL:
            violations.append(
                f"mixture {mx.get('id', '?')}: fractions sum to {total}"
            )
        for lbl in comps:
            if lbl not in labels:
                violations.append(
                    f"mixture {mx.get('id', '?')}: unknown corpus {lbl!r}"
                )
        if mx.get("token_budget", 1) <= 0:
            violations.append(f"mixture {mx.get('id', '?')}: bad token_budget")
    if not config.get("output_dir"):
        violations.append("output_dir missing")
    tok = config.get("tokenizer", "ws-punct-v1")
    try:
        get_tokenizer(tok)
    except KeyError:
        violations.append(f"unknown tokenizer {tok!r}")
    return violations


def _out_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _artifact_comment(digest: str) -> str:
    return f"config_digest={digest} tool_version={__version__}"


def _write_json(path: Path, payload: dict, digest: str) -> None:
    payload = dict(payload)
    payload["config_digest"] = digest
    payload["tool_version"] = __version__
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))


def _load_corpora(config: dict) -> List[corpus_mod.CorpusHandle]:
    tok = get_tokenizer(config.get("tokenizer", "ws-punct-v1"))
    return [
        corpus_mod.ingest(c["path"], c["format"], c["label"], tokenizer=tok)
        for c in config.get("corpora", [])
    ]


def cmd_ingest(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    handles = _load_corpora(config)
    summary = {
        h.label: {
            "doc_count": h.doc_count,
            "total_tokens": h.total_tokens,
            "warning_count": h.warning_count,
            "tokenizer_id": h.tokenizer_id,
        }
        for h in handles
    }
    _write_json(out / "ingest_summary.json", {"corpora": summary}, digest)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_mix(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    handles = _load_corpora(config)
    for mx in config.get("mixtures", []):
        spec = corpus_mod.MixtureSpec(
            components=tuple(mx["components"].items()),
            seed=int(config.get("seed", mx.get("seed", 0))),
            token_budget=int(mx["token_budget"]),
        )
        manifest = corpus_mod.mix(spec, handles)
        path = out / f"mixture_{mx['id']}.manifest.json"
        payload = json.loads(manifest.to_json())
        _write_json(path, payload, digest)
        print(f"{mx['id']}: digest {manifest.output_digest[:16]}... -> {path}")
    return 0


def cmd_stats(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    handles = _load_corpora(config)
    tables = {}
    for h in handles:
        tok = get_tokenizer(h.tokenizer_id)

        def toks(handle=h, tok=tok):
            for d in handle.documents:
                yield from tok.tokenize(d.text)

        tables[h.label] = stats.count_unigrams(toks(), h.label)

    summary: Dict[str, dict] = {}
    kl_rows = []
    test_label = config.get("stats", {}).get("test_corpus")
    for label, table in tables.items():
        entry: Dict[str, object] = {
            "total": table.total, "vocab_size": table.vocab_size,
        }
        if table.vocab_size >= 10:
            z = stats.fit_zipf(table)
            entry["zipf"] = {
                "exponent_s": z.exponent_s,
                "log_intercept": z.log_intercept,
                "r_squared": z.r_squared,
            }
            ranked = stats.ranked_counts(table)[: z.rank_range[1]]
            svg = svgreport.zipf_svg(
                [(i + 1, c) for i, (_, c) in enumerate(ranked)],
                z.exponent_s, z.log_intercept, label=label,
                config_digest=digest, tool_version=__version__,
            )
            svgreport.write_svg(svg, out / f"zipf_{label}.svg")
        if test_label and test_label in tables and label != test_label:
            rep = stats.kl_divergence(tables[test_label], table)
            entry["kl_from_test_nats"] = rep.kl_nats
            kl_rows.append((label, rep.kl_nats))
        summary[label] = entry
    if kl_rows:
        with open(out / "kl_divergence.csv", "w", newline="") as fh:
            fh.write(f"# {_artifact_comment(digest)}\n")
            writer = csv.writer(fh)
            writer.writerow(["corpus_label", "kl_nats"])
            for label, kl in sorted(kl_rows, key=lambda kv: kv[1]):
                writer.writerow([label, repr(kl)])
        svg = svgreport.bar_chart_svg(
            kl_rows, "KL(test || train) by corpus", "KL (nats)",
            config_digest=digest, tool_version=__version__,
        )
        svgreport.write_svg(svg, out / "kl_bar.svg")
    _write_json(out / "stats_summary.json", {"corpora": summary}, digest)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


def cmd_generate(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    gen = config.get("generation", {})
    gen_config = synthgen.GenerationConfig(
        endpoint_url=gen["endpoint_url"],
        model_name=gen.get("model_name", "generator"),
        temperature=gen.get("temperature", 0.7),
        top_p=gen.get("top_p", 0.95),
        max_new_tokens=gen.get("max_new_tokens", 2048),
        max_in_flight=gen.get("max_in_flight", 4),
        max_attempts=gen.get("max_attempts", 3),
        backoff_seconds=gen.get("backoff_seconds", 1.0),
        auth_env_var=gen.get("auth_env_var"),
    )
    policy = synthgen.FilterPolicy(
        min_tokens=gen.get("min_tokens", 50), max_tokens=gen.get("max_tokens")
    )
    handles = _load_corpora(config)
    source = next(h for h in handles if h.label == gen["source_corpus"])
    store = synthgen.JobStore(out / "generation_jobs.jsonl")
    kind = gen.get("kind", "HQ")
    docs = source.documents[: gen.get("max_docs", len(source.documents))]
    if kind in ("HQ", "QA"):
        jobs = synthgen.run_batch(docs, kind, gen_config, policy=policy, store=store)
    else:
        jobs = []
        for doc in docs:
            jobs.extend(
                synthgen.generate_textbook(
                    doc, gen.get("audience", "general"), gen_config,
                    policy=policy, store=store,
                )
            )
    handle = synthgen.export(
        jobs, out / f"synthetic_{kind}.jsonl", gen_config,
        label=gen.get("label", f"synthetic-{kind}"),
    )
    print(
        json.dumps(
            {"accepted_docs": handle.doc_count, "total_tokens": handle.total_tokens}
        )
    )
    return 0


def cmd_train(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    handles = _load_corpora(config)
    sur = config.get("surrogate", {})
    budgets = [int(b) for b in sur.get("budgets", [1000, 2000, 4000])]
    capacities = [tuple(p) for p in sur.get("capacities", [[2, 1]])]
    eval_handle = next(h for h in handles if h.label == sur["eval_corpus"])
    tok = get_tokenizer(eval_handle.tokenizer_id)
    eval_tokens: List[str] = []
    for d in eval_handle.documents:
        eval_tokens.extend(tok.tokenize(d.text))

    specs, ids = [], []
    for mx in config.get("mixtures", []):
        specs.append(
            corpus_mod.MixtureSpec(
                components=tuple(mx["components"].items()),
                seed=int(config.get("seed", mx.get("seed", 0))),
                token_budget=max(budgets),
            )
        )
        ids.append(mx["id"])
    records = surrogate.run_curve(
        specs, budgets, capacities, eval_tokens, handles, mixture_ids=ids
    )
    path = out / "run_records.csv"
    scaling.save_records(records, path, comment=_artifact_comment(digest))
    print(f"{len(records)} run records -> {path}")
    return 0


def cmd_fit(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    records = scaling.load_records(args.records)
    by_mixture: Dict[str, List[scaling.RunRecord]] = {}
    for r in records:
        by_mixture.setdefault(r.mixture_id, []).append(r)

    fits: Dict[str, scaling.PowerLawFit] = {}
    for mid, recs in sorted(by_mixture.items()):
        fit_filter = None
        holdout_filter = None
        if args.fit_max_d is not None:
            fit_filter = lambda r, lim=args.fit_max_d: r.d_tokens <= lim
        if args.holdout_min_d is not None:
            holdout_filter = lambda r, lim=args.holdout_min_d: r.d_tokens >= lim
        fit = scaling.fit(recs, args.form, fit_filter, holdout_filter)
        fits[mid] = fit
        scaling.save_fit(
            fit, out / f"fit_{args.form}_{mid}.json",
            extra={"mixture_id": mid, "config_digest": digest,
                   "tool_version": __version__},
        )

    series = {}
    for mid, fit in sorted(fits.items()):
        recs = by_mixture[mid]
        axis = sorted(
            {r.d_tokens for r in recs} if args.form != "model"
            else {r.n_params for r in recs}
        )
        lo, hi = axis[0], axis[-1] * (args.extrapolate_factor or 1)
        grid = np.geomspace(lo, hi, 64)
        curve = []
        for x in grid:
            if args.form == "model":
                curve.append((float(x), scaling.predict(fit, n_params=float(x))))
            else:
                nref = recs[0].n_params
                curve.append(
                    (float(x), scaling.predict(fit, n_params=nref, d_tokens=float(x)))
                )
        fit_pts, hold_pts = [], []
        for r in recs:
            x = r.n_params if args.form == "model" else r.d_tokens
            in_fit = args.fit_max_d is None or r.d_tokens <= args.fit_max_d
            (fit_pts if in_fit else hold_pts).append((x, r.loss_nats))
        series[mid] = {
            "curve": curve, "fit_points": fit_pts, "holdout_points": hold_pts,
        }
        with open(out / f"extrapolation_{args.form}_{mid}.csv", "w", newline="") as fh:
            fh.write(f"# {_artifact_comment(digest)}\n")
            writer = csv.writer(fh)
            writer.writerow(["axis_value", "predicted_loss"])
            for x, y in curve:
                writer.writerow([repr(x), svgreport.fmt_loss(y)])

    xlabel = "model size N" if args.form == "model" else "data budget D (tokens)"
    svg = svgreport.scaling_curves_svg(
        series, xlabel, config_digest=digest, tool_version=__version__
    )
    svgreport.write_svg(svg, out / f"scaling_curves_{args.form}.svg")

    if args.form == "joint":
        table = scaling.irreducible_table(fits)
        with open(out / "irreducible_loss.csv", "w", newline="") as fh:
            fh.write(f"# {_artifact_comment(digest)}\n")
            writer = csv.writer(fh)
            writer.writerow(["mixture_id", "irreducible_loss"])
            for mid, e in table:
                writer.writerow([mid, svgreport.fmt_loss(e)])
        svg = svgreport.bar_chart_svg(
            table, "Irreducible loss by mixture", "E (nats)",
            config_digest=digest, tool_version=__version__,
        )
        svgreport.write_svg(svg, out / "irreducible_bar.svg")

    for mid, fit in sorted(fits.items()):
        rm = (
            f", rmabe {svgreport.fmt_percent(fit.holdout_rmabe_percent)}%"
            if fit.holdout_rmabe_percent is not None
            else ""
        )
        print(f"{mid}: E={svgreport.fmt_loss(fit.E)}{rm}")
    return 0


def _surrogate_evaluator(config: dict):
    handles = _load_corpora(config)
    sur = config.get("surrogate", {})
    natural = sur["natural_corpus"]
    eval_handle = next(h for h in handles if h.label == sur["eval_corpus"])
    tok = get_tokenizer(eval_handle.tokenizer_id)
    eval_tokens: List[str] = []
    for d in eval_handle.documents:
        eval_tokens.extend(tok.tokenize(d.text))
    order = int(sur.get("order", 2))

    def _eval(label: str, ratio: float, n: int, d: int, seed: int) -> float:
        comps = []
        if ratio < 1.0:
            comps.append((natural, 1.0 - ratio))
        if ratio > 0.0:
            comps.append((label, ratio))
        spec = corpus_mod.MixtureSpec(
            components=tuple(comps), seed=seed, token_budget=d
        )
        manifest = corpus_mod.mix(spec, handles)
        tokens = list(corpus_mod.token_stream(manifest, handles))[:d]
        model = surrogate.train(tokens, order=order, prune_min_count=1)
        return surrogate.evaluate(model, eval_tokens).cross_entropy_nats_per_token

    return _eval


def cmd_search(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    sweep = config.get("sweep", {})
    grid = mixsearch.RatioGrid(tuple(sweep.get("grid", mixsearch.DEFAULT_RATIO_GRID)))
    seed = int(config.get("seed", sweep.get("seed", 0)))
    cells = [
        mixsearch.SearchCell(
            synthetic_label=label, n_capacity=int(n), d_budget=int(d), seed=seed
        )
        for label in sweep["synthetic_labels"]
        for n in sweep["capacities"]
        for d in sweep["budgets"]
    ]
    kind = sweep.get("evaluator", "replay")
    if kind == "replay":
        evaluator = mixsearch.replay_evaluator(sweep["replay_csv"])
    elif kind == "command":
        evaluator = mixsearch.command_evaluator(sweep["command"])
    elif kind == "surrogate":
        evaluator = _surrogate_evaluator(config)
    else:
        return _fail("config", f"unknown evaluator kind {kind!r}")
    ledger = mixsearch.CheckpointLedger(out / "sweep_ledger.jsonl")
    mixsearch.run_grid(
        grid, cells, evaluator, ledger=ledger,
        max_parallel=int(config.get("max_parallel", 1)),
    )
    mixsearch.save_cells_json(cells, out / "sweep_cells.json")
    mixsearch.save_sweep_csv(cells, out / "sweep.csv", comment=_artifact_comment(digest))
    heat = {
        (c.n_capacity, c.d_budget): c.best_ratio
        for c in cells
        if c.best_ratio is not None
    }
    if heat:
        svg = svgreport.heatmap_svg(
            heat, config_digest=digest, tool_version=__version__
        )
        svgreport.write_svg(svg, out / "ratio_heatmap.svg")
    for c in cells:
        print(f"{c.key}: best_ratio={c.best_ratio}")
    return 0


def cmd_report(args, config: dict) -> int:
    digest = config_digest(config)
    out = _out_dir(config)
    kind = args.kind
    if kind not in REPORT_KINDS:
        return _fail("usage", f"unknown report kind {kind!r}")
    if kind == "ratio_heatmap":
        best: Dict[tuple, tuple] = {}
        with open(args.input, newline="") as fh:
            for row in csv.DictReader((ln for ln in fh if not ln.startswith("#"))):
                key = (int(row["n"]), int(row["d"]))
                cand = (float(row["loss"]), float(row["ratio"]))
                if key not in best or cand < best[key]:
                    best[key] = cand
        cells = {k: ratio for k, (_, ratio) in best.items()}
        svg = svgreport.heatmap_svg(cells, config_digest=digest, tool_version=__version__)
        path = out / "ratio_heatmap.svg"
    elif kind == "kl_bar":
        rows = []
        with open(args.input, newline="") as fh:
            for row in csv.DictReader((ln for ln in fh if not ln.startswith("#"))):
                rows.append((row["corpus_label"], float(row["kl_nats"])))
        svg = svgreport.bar_chart_svg(
            rows, "KL(test || train) by corpus", "KL (nats)",
            config_digest=digest, tool_version=__version__,
        )
        path = out / "kl_bar.svg"
    elif kind == "token_loss":
        records = stats.load_loss_log(args.input)
        window = int(getattr(args, "window", None) or 100)
        rolled = stats.rolling_loss(records, window)
        svg = svgreport.token_loss_svg(
            [(r.position, r.loss_nats) for r in records], rolled,
            config_digest=digest, tool_version=__version__,
        )
        path = out / "token_loss.svg"
    else:
        return _fail(
            "usage",
            f"report kind {kind!r} is emitted by its producing subcommand "
            "(fit/stats); use that subcommand",
        )
    svgreport.write_svg(svg, path)
    print(f"{kind} -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthmix", description="Corpus mixing / scaling-law laboratory"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--dry-run", action="store_true")

    for name in ("ingest", "mix", "stats", "generate", "train", "search"):
        common(sub.add_parser(name))

    fit_p = sub.add_parser("fit")
    common(fit_p)
    fit_p.add_argument("--form", choices=scaling.FORMS, required=True)
    fit_p.add_argument("--records", required=True)
    fit_p.add_argument("--fit-max-d", type=float, default=None)
    fit_p.add_argument("--holdout-min-d", type=float, default=None)
    fit_p.add_argument("--extrapolate-factor", type=float, default=10.0)

    rep_p = sub.add_parser("report")
    common(rep_p)
    rep_p.add_argument("--kind", required=True)
    rep_p.add_argument("--in", dest="input", required=True)
    rep_p.add_argument("--window", type=int, default=None)
    return parser


HANDLERS = {
    "ingest": cmd_ingest,
    "mix": cmd_mix,
    "stats": cmd_stats,
    "generate": cmd_generate,
    "train": cmd_train,
    "fit": cmd_fit,
    "search": cmd_search,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed)
    except (OSError, tomli.TOMLDecodeError) as exc:
        return _fail("config", f"cannot load config: {exc}")
    violations = validate_config(config)
    if violations:
        return _fail("config", "config validation failed", details=violations)
    if args.dry_run:
        print(json.dumps({"valid": True, "config_digest": config_digest(config)}))
        return 0
    try:
        return HANDLERS[args.command](args, config)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        return _fail(type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())

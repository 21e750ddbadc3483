"""Command-line interface: train, explain, audit, sweep, monitor, ontology."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import io as bio
from .config_xai import efficiency, emit_ontology, fidelity, rho_sweep
from .core import Network, NetworkConfig, StackedNetwork, winners
from .errors import ConfigurationError, InvariantViolation, SchemaError
from .explain import (
    DriftMonitor,
    attractor_diagnostics,
    attribute,
    certificates,
    counterfactual,
    cross_layer_attribution,
    global_importance,
    margin_trajectory,
    margins,
    posterior_with_entropy,
    receptive_field,
    surprise,
)
from .explain.robustness import METRIC
from .learning import USAGE_DENOMINATOR, accuracy, format_log_record, train
from .oracle import COALITION_SEMANTICS
from .recurrent import settle
from .spiking import Z_INDEX_READING, raster_lines, simulate, temporal_saliency

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT, EXIT_NONCONVERGED = 0, 1, 2, 3, 4
PRIMITIVES = tuple(f"p{n}" for n in range(1, 17))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse number list {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse integer list {text!r}") from None


def _metadata(config: NetworkConfig) -> dict:
    return {
        "log_base": "natural (nats)",
        "tie_break": "lowest minicolumn index wins exact ties",
        "usage_denominator": USAGE_DENOMINATOR,
        "coalition_semantics": COALITION_SEMANTICS,
        "perturbation_metric": METRIC,
        "z_index_reading": Z_INDEX_READING,
        "eps_floor": config.eps_floor,
        "version": __version__,
    }


def _config_with_overrides(args) -> NetworkConfig:
    cfg = bio.load_config(args.config)
    if getattr(args, "tau_z", None) is not None:
        d = cfg.to_dict()
        d["z_time_constants"] = [args.tau_z, args.tau_z]
        cfg = NetworkConfig.from_dict(d)
    return cfg


def _unit_label(config: NetworkConfig, j: int, k: int) -> str:
    return f"{config.hidden_names[j]}={config.hidden_states[j][k]}"


def _input_labels(config: NetworkConfig) -> list:
    return [f"{n}={s}" for n, st in zip(config.input_names, config.input_states) for s in st]


def _parse_target(text: Optional[str], config: NetworkConfig) -> Optional[tuple]:
    """``hc:state`` with names or indices."""
    if text is None:
        return None
    if ":" not in text:
        raise ConfigurationError(f"target {text!r} is not hc:state")
    hc, st = text.split(":", 1)
    j = config.hidden_names.index(hc) if hc in config.hidden_names else None
    if j is None:
        try:
            j = int(hc)
        except ValueError:
            raise ConfigurationError(f"unknown hidden hypercolumn {hc!r}") from None
    if not 0 <= j < config.n_hidden_hc:
        raise ConfigurationError(f"hidden hypercolumn {hc!r} out of range")
    states = config.hidden_states[j]
    if st in states:
        return j, states.index(st)
    try:
        k = int(st)
    except ValueError:
        raise ConfigurationError(f"hypercolumn {hc!r} has no state {st!r}") from None
    if not 0 <= k < len(states):
        raise ConfigurationError(f"state {st!r} out of range")
    return j, k


# --------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = _config_with_overrides(args)
    out = Path(args.output)
    onto_path = Path(args.ontology) if args.ontology else out.with_suffix(".ontology.json")
    # the ontology is written from the declaration alone, before any update
    doc = emit_ontology(cfg, purpose=args.purpose or "", timestamp=_timestamp(args))
    onto_path.write_text(doc.to_json())

    ds = bio.read_dataset(args.dataset, cfg, require_labels=args.mode == "supervised")
    noise = 0.1 if args.mode == "unsupervised" else 0.0
    model = Network.initial(cfg, seed=args.seed, noise=noise)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    with open(log_path, "w") as fh:
        res = train(
            model, ds.X, ds.labels if args.mode == "supervised" else None, epochs=args.epochs,
            mode=args.mode, seed=args.seed, log_sink=lambda rec: fh.write(format_log_record(rec) + "\n"),
        )
    digest = bio.save_snapshot(model, out)
    summary = {
        "snapshot": str(out),
        "model_digest": digest,
        "ontology_digest": doc.digest,
        "seed": args.seed,
        "mode": args.mode,
        "steps": res.steps,
        "swaps": len(res.events),
        "dataset_digest": ds.digest,
    }
    if ds.labels is not None:
        summary["train_accuracy"] = accuracy(model, ds.X, ds.labels)
    _write(bio.dumps_report(summary), None)
    return EXIT_OK


def _timestamp(args) -> Optional[str]:
    if getattr(args, "timestamp", None):
        return args.timestamp
    return os.environ.get("SOURCE_DATE_EPOCH")


# --------------------------------------------------------------------------
# explain


def _unavailable(reason: str) -> dict:
    return {"available": False, "reason": reason}


def _select(text: str) -> list:
    chosen = []
    for t in text.lower().split(","):
        t = t.strip()
        if not t:
            continue
        if t == "all":
            return list(PRIMITIVES)
        if t not in PRIMITIVES:
            raise ConfigurationError(f"unknown primitive {t!r}")
        if t not in chosen:
            chosen.append(t)
    return sorted(chosen, key=PRIMITIVES.index)


def _explain_sections(args, snap, model: Network, x: np.ndarray, chosen: list, reference) -> tuple:
    cfg = model.config
    state = model.forward(x)
    target = _parse_target(args.target, cfg)
    attr = attribute(state, model, target)
    j, k = attr.target
    nonconverged = False
    sec = {}
    labels = _input_labels(cfg)

    recurrent_ok = cfg.recurrence
    run = settle(state, model) if recurrent_ok and ({"p8", "p15"} & set(chosen)) else None

    for p in chosen:
        if p == "p1":
            sec["P1"] = {
                "target": _unit_label(cfg, j, k),
                "evidence": [{"input": lab, "value": v} for lab, v in zip(labels, attr.evidence)],
            }
        elif p == "p2":
            sec["P2"] = {"target": _unit_label(cfg, j, k), "bias": attr.bias}
        elif p == "p11":
            sec["P11"] = {
                "target": _unit_label(cfg, j, k),
                "bias": attr.bias,
                "phi": {cfg.input_names[i]: v for i, v in enumerate(attr.phi)},
                "support": attr.support,
                "residual": attr.residual,
                "bars": [
                    {"label": b["label"], "contribution": b["value"]} for b in attr.bars()
                ],
            }
        elif p == "p3":
            pr = posterior_with_entropy(state, model)
            ho = cfg.hidden_offsets
            sec["P3"] = {
                "hypercolumns": [
                    {
                        "name": cfg.hidden_names[h],
                        "posterior": {s: pr.posterior[ho[h] + m] for m, s in enumerate(cfg.hidden_states[h])},
                        "entropy": pr.entropies[h],
                        "winner": cfg.hidden_states[h][pr.winners[h]],
                    }
                    for h in range(cfg.n_hidden_hc)
                ]
            }
        elif p in ("p4", "p5"):
            if "P4/P5" in sec:
                continue
            g = global_importance(model)
            sec["P4/P5"] = {
                "edges": [
                    {
                        "input": cfg.input_names[e.input_hc],
                        "hidden": cfg.hidden_names[e.hidden_hc],
                        "active": e.active,
                        "usage": e.usage,
                    }
                    for e in g.edges
                ],
                "usage_denominator": g.denominator,
            }
        elif p in ("p6", "p7"):
            if "P6/P7" in sec:
                continue
            if reference is not None:
                rf = receptive_field(model, (j, k), reference=reference.X)
            else:
                rf = receptive_field(model, (j, k), query=x)
            body = {
                "target": _unit_label(cfg, j, k),
                "mode": rf.mode,
                "field": [{"input": lab, "value": v} for lab, v in zip(labels, rf.values)],
            }
            if rf.tuning is not None:
                body["tuning_curve"] = [{"input": lab, "mean_activation": v} for lab, v in zip(labels, rf.tuning)]
                body["reference_size"] = rf.reference_size
            else:
                body["tuning_curve"] = _unavailable("needs a reference set (--reference)")
            sec["P6/P7"] = body
        elif p == "p8":
            if not recurrent_ok:
                sec["P8"] = _unavailable("recurrence disabled")
                continue
            d = attractor_diagnostics(run, cfg.hidden_offsets, cfg.settle_tolerance)
            if args.trajectory_dump:
                Path(args.trajectory_dump).write_text(bio.trajectory_lines(run.trajectory, cfg))
            nonconverged |= not run.converged
            sec["P8"] = {
                "settling_step": d.settling_step,
                "basin_width": d.basin_width,
                "trajectory_length": d.trajectory_length,
                "converged": d.converged,
                "dominant_hypercolumn": cfg.hidden_names[d.dominant_hc],
                "epsilon": cfg.settle_tolerance,
            }
        elif p == "p9":
            if not recurrent_ok:
                sec["P9"] = _unavailable("recurrence disabled")
                continue
            ct = _parse_target(args.counterfactual_target, cfg)
            if ct is None:
                jl = cfg.label_hypercolumn
                seg = state.posterior[cfg.hidden_offsets[jl]:cfg.hidden_offsets[jl + 1]]
                ct = (jl, int(np.argsort(-seg, kind="stable")[1]))
            cf = counterfactual(state, model, ct)
            if cf.clamped.run is not None:
                nonconverged |= not cf.clamped.run.converged
            io_ = cfg.input_offsets
            wins = winners(cf.clamped.activity, io_)
            sec["P9"] = {
                "target": _unit_label(cfg, *cf.target),
                "free_reconstruction": [{"input": lab, "value": v} for lab, v in zip(labels, cf.free.activity)],
                "counterfactual": {
                    cfg.input_names[i]: cfg.input_states[i][wins[i]] for i in range(cfg.n_input_hc)
                },
                "changed_attributes": [cfg.input_names[i] for i in cf.changed],
                "changed_vs_free": [cfg.input_names[i] for i in cf.changed_vs_free],
            }
        elif p == "p10":
            steps = args.spike_steps
            run_s = simulate(x, state.posterior, cfg, steps, seed=args.seed, learn=False, record=True)
            ts = temporal_saliency(run_s.zhat_pre, run_s.zhat_post, model.weights,
                                   min(args.window, steps), target=attr.unit)
            peak = int(ts.peak_window[0])
            if args.raster_dump:
                lines = list(raster_lines(run_s.spikes_pre, "input", cfg.input_sizes))
                lines += raster_lines(run_s.spikes_post, "hidden", cfg.hidden_sizes)
                Path(args.raster_dump).write_text("".join(line + "\n" for line in lines))
            sec["P10"] = {
                "target": _unit_label(cfg, j, k),
                "steps": steps,
                "window_steps": ts.window,
                "window_totals": ts.window_totals[:, 0],
                "peak_window": peak,
                "peak_window_ms": list(ts.window_bounds_ms(peak)),
                "integrated_evidence": float(ts.contributions.sum()),
                **{key: v for key, v in run_s.metadata.items() if key != "z_index_reading"},
            }
        elif p == "p12":
            s = surprise(state, model, settled=args.settled and recurrent_ok)
            sec["P12"] = {
                "surprise": s.total,
                "per_hypercolumn": {cfg.hidden_names[h]: v for h, v in enumerate(s.per_hypercolumn)},
                "posterior": "settled" if s.settled else "feedforward",
            }
        elif p == "p13":
            sec["P13"] = _unavailable("needs a live stream; use the monitor command")
        elif p == "p14":
            sec["P14"] = {
                "metric": METRIC,
                "certificates": [
                    {
                        "hypercolumn": cfg.hidden_names[c.hypercolumn],
                        "winner": cfg.hidden_states[c.hypercolumn][c.winner],
                        "radius": c.radius,
                        "challenger": None if c.challenger is None else cfg.hidden_states[c.hypercolumn][c.challenger],
                    }
                    for c in certificates(x, model)
                ],
            }
        elif p == "p15":
            body = {"margins": {cfg.hidden_names[h]: v for h, v in enumerate(margins(state.posterior, cfg.hidden_offsets))}}
            if run is not None:
                mt = margin_trajectory(run.trajectory, cfg.hidden_offsets, j)
                body["settling_margins"] = mt
                body["monotone_during_settling"] = bool(np.all(np.diff(mt) >= -1e-12))
            sec["P15"] = body
        elif p == "p16":
            stack = snap if isinstance(snap, StackedNetwork) else StackedNetwork([model])
            cl = cross_layer_attribution(x, stack, None if isinstance(snap, StackedNetwork) else (j, k))
            sec["P16"] = {
                "layers": len(stack.layers),
                "tree": cl.tree(max_depth=args.tree_depth),
                "leaf_totals_signed": {cfg.input_names[i]: v for i, v in enumerate(cl.leaf_signed)},
                "leaf_totals_absolute": {cfg.input_names[i]: v for i, v in enumerate(cl.leaf_absolute)},
            }
    return sec, nonconverged


def cmd_explain(args) -> int:
    snap = bio.load_snapshot(args.snapshot)
    model = snap.layers[0] if isinstance(snap, StackedNetwork) else snap
    cfg = model.config
    x = bio.parse_query(args.query, cfg)
    chosen = _select(args.primitives)
    reference = bio.read_dataset(args.reference, cfg) if args.reference else None
    sections, nonconverged = _explain_sections(args, snap, model, x, chosen, reference)
    report = {
        "command": "explain",
        "model_digest": bio.model_digest(snap),
        "seed": args.seed,
        "inputs_digest": bio.sha256(args.query.encode("utf-8")),
        "query": args.query,
        "primitives": chosen,
        "metadata": _metadata(cfg),
        "sections": sections,
    }
    if reference is not None:
        report["reference_digest"] = reference.digest
    _write(bio.dumps_report(report), args.output)
    return EXIT_NONCONVERGED if nonconverged else EXIT_OK


# --------------------------------------------------------------------------
# audit, sweep, monitor, ontology


def cmd_audit(args) -> int:
    snap = bio.load_snapshot(args.snapshot)
    model = snap.layers[-1] if isinstance(snap, StackedNetwork) else snap
    cfg = model.config
    eff = efficiency(model, args.threshold)
    report = {
        "command": "audit",
        "model_digest": bio.model_digest(snap),
        "seed": args.seed,
        "metadata": _metadata(cfg),
        "sections": {
            "Config-P2": {
                "per_hypercolumn": {cfg.hidden_names[j]: v for j, v in enumerate(eff.per_hypercolumn)},
                "mean": eff.mean,
                "threshold": f"{eff.threshold:g} x median",
                "flagged": [cfg.hidden_names[j] for j in eff.flagged],
                "closest_pair_distance": {cfg.hidden_names[j]: v for j, v in enumerate(eff.closest_pair)},
            }
        },
    }
    if args.expert_ranking:
        ranking = [t.strip() for t in args.expert_ranking.split(",") if t.strip()]
        fs = fidelity(ranking, model)
        report["sections"]["Config-P4"] = {
            "cf": fs.cf,
            "expert_ranking": fs.expert_ranking,
            "usage_ranking": fs.usage_ranking,
            "usage": fs.usage,
            "tie_handling": fs.tie_handling,
        }
    else:
        report["sections"]["Config-P4"] = {"omitted": "no expert ranking supplied"}
    _write(bio.dumps_report(report), args.output)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config_with_overrides(args)
    ds = bio.read_dataset(args.dataset, cfg, require_labels=args.mode == "supervised")
    curve = rho_sweep(
        cfg, ds.X, ds.labels if args.mode == "supervised" else None, _floats(args.rho_grid),
        _ints(args.seeds), epochs=args.epochs, mode=args.mode, jobs=args.jobs,
        eval_set=(ds.X, ds.labels) if ds.labels is not None else None,
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rho", "seed", "accuracy", "active_connections", "graph_size", "swaps"])
    for row in curve.rows():
        w.writerow([bio.clean(v) for v in row])
    _write(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_monitor(args) -> int:
    snap = bio.load_snapshot(args.snapshot)
    model = snap.layers[-1] if isinstance(snap, StackedNetwork) else snap
    cfg = model.config
    ds = bio.read_dataset(args.dataset, cfg)
    n0 = args.baseline_window
    if not 2 <= n0 < len(ds.X):
        raise ConfigurationError("baseline window must cover >= 2 rows and leave a live stream")
    post = model.posterior_batch(ds.X)
    mon = DriftMonitor.from_baseline(post[:n0], args.cusum_k, args.cusum_h, args.live_tau)
    names = [_unit_label(cfg, j, k) for j in range(cfg.n_hidden_hc) for k in range(cfg.hidden_sizes[j])]
    events = []
    for t, p in enumerate(post[n0:]):
        for a in mon.observe(p):
            events.append({
                "step": t,
                "row": n0 + t,
                "trace": names[a.trace],
                "direction": a.direction,
                "statistic": a.statistic,
                "threshold": float(mon.h[a.trace]),
            })
    _write(bio.jsonl(events), args.output)
    summary = {
        "command": "monitor",
        "model_digest": bio.model_digest(snap),
        "dataset_digest": ds.digest,
        "seed": args.seed,
        "baseline_window": n0,
        "live_steps": len(ds.X) - n0,
        "alarms": len(events),
        "k_sigma": args.cusum_k,
        "h_sigma": args.cusum_h,
        "live_tau": args.live_tau,
    }
    sys.stderr.write(json.dumps(bio.clean(summary), sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ontology(args) -> int:
    cfg = _config_with_overrides(args)
    doc = emit_ontology(cfg, purpose=args.purpose or "", timestamp=_timestamp(args),
                        spiking=args.spiking or args.tau_z is not None)
    _write(doc.to_json(), args.output)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bcpnn-xai", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--output", "-o", default=None)
        sp.add_argument("--jobs", type=int, default=1)

    t = sub.add_parser("train", help="train a model and write a snapshot")
    common(t)
    t.add_argument("--config", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--mode", choices=("supervised", "unsupervised"), default="supervised")
    t.add_argument("--epochs", type=int, default=1)
    t.add_argument("--log", default=None, help="training log (JSON lines)")
    t.add_argument("--ontology", default=None, help="where to write the ontology document")
    t.add_argument("--purpose", default="")
    t.add_argument("--timestamp", default=None)
    t.add_argument("--tau-z", type=float, default=None)
    t.set_defaults(func=cmd_train, output="model.bcpnn")

    e = sub.add_parser("explain", help="explain one query")
    common(e)
    e.add_argument("--snapshot", required=True)
    e.add_argument("--query", required=True, help='e.g. "Colour=red,Shape=round,Size=medium"')
    e.add_argument("--primitives", default="all")
    e.add_argument("--target", default=None, help="hidden minicolumn as hc:state")
    e.add_argument("--counterfactual-target", default=None)
    e.add_argument("--reference", default=None, help="dataset for reference-set receptive fields")
    e.add_argument("--settled", action="store_true", help="surprise from the settled posterior")
    e.add_argument("--spike-steps", type=int, default=1000)
    e.add_argument("--window", type=int, default=100)
    e.add_argument("--tree-depth", type=int, default=None)
    e.add_argument("--trajectory-dump", default=None, help="write the settling trajectory (JSON lines)")
    e.add_argument("--raster-dump", default=None, help="write the spike raster (t,population,hc,minicolumn)")
    e.set_defaults(func=cmd_explain)

    a = sub.add_parser("audit", help="configuration audit of a trained model")
    common(a)
    a.add_argument("--snapshot", required=True)
    a.add_argument("--expert-ranking", default=None, help="attribute labels, most important first")
    a.add_argument("--threshold", type=float, default=0.05)
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("sweep", help="accuracy and sparsity over a rho grid")
    common(s)
    s.add_argument("--config", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--rho-grid", required=True)
    s.add_argument("--seeds", default="0")
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--mode", choices=("supervised", "unsupervised"), default="supervised")
    s.add_argument("--tau-z", type=float, default=None)
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("monitor", help="CUSUM drift alarms over a stream")
    common(m)
    m.add_argument("--snapshot", required=True)
    m.add_argument("--dataset", required=True, help="stream; the first rows form the baseline")
    m.add_argument("--baseline-window", type=int, default=1000)
    m.add_argument("--cusum-k", type=float, default=0.5, help="slack in baseline standard deviations")
    m.add_argument("--cusum-h", type=float, default=5.0, help="threshold in baseline standard deviations")
    m.add_argument("--live-tau", type=float, default=20.0)
    m.set_defaults(func=cmd_monitor)

    o = sub.add_parser("ontology", help="emit the ontology document of a config")
    common(o)
    o.add_argument("--config", required=True)
    o.add_argument("--purpose", default="")
    o.add_argument("--timestamp", default=None)
    o.add_argument("--spiking", action="store_true")
    o.add_argument("--tau-z", type=float, default=None)
    o.set_defaults(func=cmd_ontology)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        sys.stderr.write(f"error: {exc}\n")
        for d in exc.diagnostics:
            sys.stderr.write(f"  {json.dumps(d, sort_keys=True)}\n")
        return EXIT_DATA
    except InvariantViolation as exc:
        sys.stderr.write(f"invariant violated: {exc}\n")
        return EXIT_INVARIANT
    except ConfigurationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front door: analyze, trace, search, attack, smooth.

Commands that do real work take a JSON spec file so every run is
replayable; the resolved spec (seed included) is embedded in each output
together with a format-version field.  Exit code 0 means the command
completed and its self-checks passed.
"""

from __future__ import annotations

import argparse
import json
import sys
from functools import partial
from pathlib import Path

import numpy as np

from . import adversarial, dynamics, evolution, invariant, losses, net

FORMAT_VERSION = 1


def _parse_floats(text: str, count: int, what: str) -> list[float]:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != count:
        raise ValueError(f"{what} needs exactly {count} comma-separated numbers, got {len(parts)}")
    return [float(p) for p in parts]


def _parse_loss(doc):
    """Return (name, gamma_fn, params-or-None) for a spec 'loss' entry."""
    if isinstance(doc, dict) and "taylor" in doc:
        params = losses.as_loss_params(doc["taylor"])
        return "taylor", partial(losses.gamma_taylor, params), params
    if isinstance(doc, str):
        if doc.startswith("taylor:"):
            params = losses.as_loss_params(_parse_floats(doc[len("taylor:"):], losses.LAMBDA_DIM, "taylor loss"))
            return "taylor", partial(losses.gamma_taylor, params), params
        table = {"mse": losses.gamma_mse, "ce": losses.gamma_ce, "baikal": losses.gamma_baikal}
        if doc in table:
            return doc, table[doc], None
    raise ValueError(f"unknown loss spec {doc!r}")


def _build_dataset(doc, seed: int) -> net.Dataset:
    kind = doc.get("kind", "blobs")
    if kind == "blobs":
        return net.make_blobs(
            n_classes=int(doc.get("classes", 2)),
            samples_per_class=int(doc.get("per_class", 100)),
            dim=int(doc.get("dim", 2)),
            spread=float(doc.get("spread", 0.3)),
            rng_seed=int(doc.get("seed", seed)),
        )
    if kind == "idx":
        return net.load_idx(doc["images"], doc["labels"], limit=doc.get("limit"))
    raise ValueError(f"unknown dataset kind {kind!r}")


def _load_spec(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _relerr(a: float, b: float) -> float:
    return abs(a - b) / (1.0 + abs(a))


def _analyze_report(coeffs: losses.GammaCoeffs, n: int, params=None) -> dict:
    ze = losses.zero_error_coeffs(params) if params is not None else losses.zero_error_from_coeffs(coeffs)
    g_target, g_nontarget = losses.null_epoch_gamma(coeffs, n)
    report_inv = invariant.check_invariant(coeffs, n)
    strengths = []
    for eps in (1e-3, 1e-2, 1e-1):
        state = dynamics.LogitState(eps, n, ze.gamma_target(), ze.gamma_nontarget())
        strengths.append({"epsilon": eps, "strength": dynamics.entropy_reduction_strength(state)})
    report = {
        "coeffs": coeffs.to_dict(),
        "zero_error": ze.to_dict(),
        "null_epoch": {"gamma_target": g_target, "gamma_nontarget": g_nontarget},
        "invariant": report_inv.to_dict(),
        "zero_error_strength": strengths,
    }
    if params is not None:
        decision = invariant.gate_candidate(params, n)
        report["gate"] = {"accepted": decision.accepted, "reason": decision.reason}
    return report


def cmd_analyze(args) -> int:
    n = args.n
    if args.lambda_ is not None:
        params = losses.as_loss_params(_parse_floats(args.lambda_, losses.LAMBDA_DIM, "--lambda"))
        coeffs = losses.expand_coeffs(params)
        spec = {"lambda": params.tolist(), "n": n}
        report = _analyze_report(coeffs, n, params=params)
        rng = np.random.default_rng(args.seed)
        worst = 0.0
        for _ in range(50):
            h, y = rng.uniform(0, 1, 2)
            worst = max(worst, _relerr(float(losses.gamma_taylor(params, h, y)), float(coeffs.evaluate(h, y))))
        ze = losses.zero_error_coeffs(params)
        for y in (0.0, 1.0):
            worst = max(worst, _relerr(float(losses.gamma_taylor(params, y, y)), ze.a + ze.b * y + ze.c * y * y))
        ok = worst <= 1e-9
        report["self_check"] = {"status": "ok" if ok else "failed", "max_relative_error": worst}
    else:
        values = _parse_floats(args.coeffs, 6, "--coeffs")
        coeffs = losses.GammaCoeffs(*values)
        spec = {"coeffs": coeffs.to_dict(), "n": n}
        report = _analyze_report(coeffs, n)
        ok = all(np.isfinite(v) for v in report["null_epoch"].values())
        report["self_check"] = {"status": "ok" if ok else "failed"}
    doc = {"format_version": FORMAT_VERSION, "spec": spec, **report}
    _write_json(doc, args.out)
    return 0 if ok else 1


def cmd_smooth(args) -> int:
    if args.lambda_ is not None:
        params = losses.as_loss_params(_parse_floats(args.lambda_, losses.LAMBDA_DIM, "--lambda"))
        coeffs = losses.expand_coeffs(params)
        spec = {"lambda": params.tolist(), "alpha": args.alpha, "n": args.n}
    else:
        coeffs = losses.GammaCoeffs(*_parse_floats(args.coeffs, 6, "--coeffs"))
        spec = {"coeffs": coeffs.to_dict(), "alpha": args.alpha, "n": args.n}
    smoothed = losses.smooth_coeffs(coeffs, args.alpha, args.n)

    target, nontarget = losses.smoothed_targets(args.alpha, args.n)
    h = np.random.default_rng(args.seed).uniform(0, 1, 100)
    worst = 0.0
    for y_hard, y_smooth in ((0.0, nontarget), (1.0, target)):
        direct = coeffs.evaluate(h, y_smooth)
        folded = smoothed.evaluate(h, y_hard)
        worst = max(worst, float(np.max(np.abs(direct - folded) / (1.0 + np.abs(direct)))))
    ok = worst <= 1e-9
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": spec,
        "coeffs": coeffs.to_dict(),
        "smoothed_coeffs": smoothed.to_dict(),
        "smoothed_targets": {"target": target, "nontarget": nontarget},
        "self_check": {"status": "ok" if ok else "failed", "max_relative_error": worst},
    }
    _write_json(doc, args.out)
    return 0 if ok else 1


def cmd_trace(args) -> int:
    spec = _load_spec(args.spec)
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    spec["seed"] = seed
    dataset = _build_dataset(spec["dataset"], seed)
    loss_name, gamma_fn, _ = _parse_loss(spec["loss"])
    train_doc = spec.get("train", {})
    config = net.TrainConfig(
        eta=float(train_doc.get("eta", 0.1)),
        epochs=int(train_doc.get("epochs", 30)),
        rng_seed=seed,
        logit_floor=float(train_doc.get("logit_floor", losses.DEFAULT_LOGIT_FLOOR)),
        log_per_sample=True,
    )
    hidden = tuple(spec.get("hidden", [8]))
    network = net.Network((dataset.dim, *hidden, dataset.n_classes), rng_seed=seed)
    diverged = False
    try:
        _, run_log = net.train(network, dataset, gamma_fn, config)
    except net.TrainingDivergedError as exc:
        run_log = exc.run_log
        diverged = True

    records = dynamics.attraction_trace(run_log, gamma_fn)
    out_csv = args.out or "trace.csv"
    dynamics.write_trace_csv(records, out_csv)
    fractions = dynamics.strength_sign_fractions(records)
    boundary = sum(1 for r in records if r.boundary)
    summary = {
        "format_version": FORMAT_VERSION,
        "spec": spec,
        "loss": loss_name,
        "records": len(records),
        "boundary_records": boundary,
        "diverged": diverged,
        "accuracy": [float(a) for a in run_log.accuracy],
        "fractions_by_epoch": {str(k): v for k, v in fractions.items()},
    }
    expected = len(run_log.target_h) * len(dataset)
    ok = len(records) == expected and not diverged
    summary["self_check"] = {"status": "ok" if ok else "failed"}
    _write_json(summary, str(Path(out_csv).with_suffix(".summary.json")))
    return 0 if ok else 1


def cmd_search(args) -> int:
    spec = _load_spec(args.spec)
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    spec["seed"] = seed
    dataset = _build_dataset(spec["dataset"], seed)
    search_doc = spec.get("search", {})
    train_doc = spec.get("train", {})
    budget = net.TrainConfig(
        eta=float(train_doc.get("eta", 0.3)),
        epochs=int(train_doc.get("epochs", 10)),
        rng_seed=seed,
        logit_floor=float(train_doc.get("logit_floor", losses.DEFAULT_LOGIT_FLOOR)),
    )
    config = evolution.SearchConfig(
        generations=int(search_doc.get("generations", 8)),
        eval_budget=budget,
        population_size=int(search_doc.get("population_size", 20)),
        use_invariant=bool(search_doc.get("use_invariant", True)),
        sigma0=float(search_doc.get("sigma0", 0.5)),
        rng_seed=seed,
        hidden_sizes=tuple(search_doc.get("hidden", [8])),
        val_fraction=float(search_doc.get("val_fraction", 0.2)),
        epsilon_star=search_doc.get("epsilon_star"),
    )
    run = evolution.search_detailed(config, dataset)
    best_so_far = run.best_so_far()
    fitnesses = [c.fitness for gen in run.history for c in gen]
    ok = run.best.fitness == max(fitnesses) and all(
        b2 >= b1 for b1, b2 in zip(best_so_far, best_so_far[1:])
    )
    doc = {
        "format_version": FORMAT_VERSION,
        "spec": spec,
        "config": config.to_dict(),
        "generations": [[c.to_dict() for c in gen] for gen in run.history],
        "best": run.best.to_dict(),
        "best_so_far": best_so_far,
        "gated_count": sum(c.gated for gen in run.history for c in gen),
        "es_state": run.es_state,
        "self_check": {"status": "ok" if ok else "failed"},
    }
    _write_json(doc, args.out)
    return 0 if ok else 1


def cmd_attack(args) -> int:
    spec = _load_spec(args.spec)
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    spec["seed"] = seed
    dataset = _build_dataset(spec["dataset"], seed)
    loss_name, gamma_fn, _ = _parse_loss(spec["loss"])

    if "checkpoint" in spec:
        network = net.load_checkpoint(spec["checkpoint"])
        accuracies = []
    else:
        train_doc = spec.get("train", {})
        config = net.TrainConfig(
            eta=float(train_doc.get("eta", 0.1)),
            epochs=int(train_doc.get("epochs", 30)),
            rng_seed=seed,
            logit_floor=float(train_doc.get("logit_floor", losses.DEFAULT_LOGIT_FLOOR)),
        )
        hidden = tuple(spec.get("hidden", [8]))
        network = net.Network((dataset.dim, *hidden, dataset.n_classes), rng_seed=seed)
        _, run_log = net.train(network, dataset, gamma_fn, config)
        accuracies = [float(a) for a in run_log.accuracy]
    if "save_model" in spec:
        net.save_checkpoint(network, spec["save_model"])

    attack_gamma_fn = None
    attack_loss = spec.get("attack_loss", "same")
    if attack_loss != "same":
        _, attack_gamma_fn, _ = _parse_loss(attack_loss)
    clamp = tuple(spec["clamp"]) if "clamp" in spec else None
    attack = adversarial.AttackConfig(tuple(spec.get("epsilons", [0.0, 0.1, 0.2])), clamp)
    rows = adversarial.robustness_sweep(network, dataset, gamma_fn, attack, attack_gamma_fn=attack_gamma_fn)

    out_csv = args.out or "sweep.csv"
    adversarial.write_sweep_csv(rows, out_csv)
    clean = net.accuracy(network, dataset)
    ok = True
    if rows and rows[0][0] == 0.0:
        ok = rows[0][1] == clean
    summary = {
        "format_version": FORMAT_VERSION,
        "spec": spec,
        "loss": loss_name,
        "clean_accuracy": clean,
        "sweep": [{"epsilon": e, "accuracy": a} for e, a in rows],
        "train_accuracy": accuracies,
        "self_check": {"status": "ok" if ok else "failed"},
    }
    _write_json(summary, str(Path(out_csv).with_suffix(".summary.json")))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaloss", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, spec_based: bool):
        p.add_argument("--out", help="output path (JSON report, or CSV for trace/attack)")
        p.add_argument("--seed", type=int, default=None, help="override the spec's RNG seed")
        if spec_based:
            p.add_argument("--spec", required=True, help="JSON experiment spec")

    p = sub.add_parser("analyze", help="coefficients, zero-error reduction, trainability report")
    p.add_argument("--lambda", dest="lambda_", help="8 comma-separated loss parameters")
    p.add_argument("--coeffs", help="6 comma-separated coefficients c1,ch,chh,chy,cy,cyy")
    p.add_argument("--n", type=int, required=True, help="class count")
    add_common(p, spec_based=False)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("smooth", help="fold label smoothing into the coefficients")
    p.add_argument("--lambda", dest="lambda_", help="8 comma-separated loss parameters")
    p.add_argument("--coeffs", help="6 comma-separated coefficients")
    p.add_argument("--alpha", type=float, required=True, help="smoothing strength in (0, 1)")
    p.add_argument("--n", type=int, required=True, help="class count")
    add_common(p, spec_based=False)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("trace", help="train with per-sample logging, emit attraction trace CSV")
    add_common(p, spec_based=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("search", help="evolutionary loss search, emit history JSON")
    add_common(p, spec_based=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("attack", help="gradient-sign robustness sweep, emit CSV")
    add_common(p, spec_based=True)
    p.set_defaults(func=cmd_attack)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("analyze", "smooth"):
        if (args.lambda_ is None) == (args.coeffs is None):
            parser.error("provide exactly one of --lambda or --coeffs")
        if args.command == "smooth" and not 0.0 < args.alpha < 1.0:
            parser.error("--alpha must lie in (0, 1)")
    if args.seed is None and args.command in ("analyze", "smooth"):
        args.seed = 0
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

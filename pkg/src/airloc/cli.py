"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
4 invalid bundle / query / result data. Set ``AIRLOC_LOG_LEVEL`` (e.g.
``DEBUG``) for more output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analytics
from .bundle_io import BundleFormatError, BundleValidationError, load_bundle, load_queries, save_bundle, save_queries
from .index import query_score
from .pipeline import Adaptive, Fixed, MatcherConfig, read_results, run_batch, write_results
from .pnp import RansacConfig
from .policy import PolicyConfig
from .synthworld import WorldConfig, WorldConfigError, generate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4

log = logging.getLogger("airloc")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Settings of a ``localize`` run. Flags override values from ``--config``."""

    bundle: Optional[str] = None
    queries: Optional[str] = None
    mode: str = "adaptive"
    k: int = 10
    alpha: float = 0.5
    beta: float = 0.7
    gamma_low: float = 0.4
    gamma_high: float = 0.6
    n_score: int = 3
    ratio_threshold: float = 0.9
    max_features: Optional[int] = None
    ransac_max_iterations: int = 10_000
    ransac_threshold: float = 12.0
    ransac_confidence: float = 0.9999
    ransac_min_inliers: int = 12
    parallelism: int = 1
    output: Optional[str] = None
    seed: int = 0

    def mode_spec(self):
        if self.mode == "fixed":
            return Fixed(self.k, self.n_score)
        if self.mode == "adaptive":
            return Adaptive(PolicyConfig(self.k, self.alpha, self.beta, self.gamma_low,
                                         self.gamma_high, self.n_score))
        raise ConfigError(f"mode: expected 'fixed' or 'adaptive', got {self.mode!r}")

    def ransac_config(self) -> RansacConfig:
        return RansacConfig(self.ransac_max_iterations, self.ransac_threshold, self.ransac_confidence,
                            self.ransac_min_inliers, self.seed)

    def matcher_config(self) -> MatcherConfig:
        return MatcherConfig(self.ratio_threshold, self.max_features)

    def validate(self) -> None:
        for name in ("bundle", "queries", "output"):
            if not getattr(self, name):
                raise ConfigError(f"{name}: required")
        if self.parallelism < 1:
            raise ConfigError("parallelism: must be >= 1")
        try:
            self.mode_spec()
            self.ransac_config()
            self.matcher_config()
            if not 0.0 < self.ratio_threshold <= 1.0:
                raise ValueError("ratio_threshold must lie in (0, 1]")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return data


def _build_run_config(args) -> RunConfig:
    data = {}
    if args.config:
        data = _read_json(args.config)
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{args.config}: unknown field {unknown[0]!r}")
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    data = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        config = WorldConfig.from_dict(data)
    except WorldConfigError as exc:
        raise ConfigError(f"config error in field {exc.field!r}: {exc}") from None
    world = generate(config)
    out = Path(args.out)
    save_bundle(world.bundle, out / "bundle")
    save_queries(world.queries, out / "queries")
    with open(out / "world_config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(world.bundle)} reference images and {len(world.queries)} queries to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    b = load_bundle(args.bundle)
    nfeat = [len(im.features) for im in b.images.values()]
    print(f"bundle {b.name}: {len(b.cameras)} cameras, {len(b.images)} images, "
          f"{len(b.points3d)} points")
    print(f"descriptor dims: local {b.local_descriptor_dim}, global {b.global_descriptor_dim}")
    print(f"features per image: min {min(nfeat)}, mean {np.mean(nfeat):.1f}, max {max(nfeat)}")
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg = _build_run_config(args)
    bundle = load_bundle(cfg.bundle, cfg.max_features)
    queries = load_queries(cfg.queries, cfg.max_features)
    batch = run_batch(queries, bundle, cfg.mode_spec(), cfg.matcher_config(), cfg.ransac_config(),
                      cfg.parallelism)
    batch.summary["config"] = asdict(cfg)
    write_results(cfg.output, batch)
    s = batch.summary
    print(f"{s['num_localized']}/{s['num_queries']} localized; mean budget {s['mean_budget']:.3f}; "
          f"pair units {s['total_pair_units']}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    bundle = load_bundle(args.bundle)
    queries = load_queries(args.queries)
    study = analytics.correlation_study(bundle, queries, args.k_eval, args.ratio_threshold)
    analytics.write_csv(args.output, [
        {"query_id": s.query_id, "reference_id": s.reference_id, "similarity": repr(s.similarity),
         "match_ratio": repr(s.match_ratio)} for s in study.samples],
        ["query_id", "reference_id", "similarity", "match_ratio"])
    if args.summary:
        analytics.write_csv(args.summary, [{"num_samples": len(study.samples), "k_eval": args.k_eval,
                                            "pcc": repr(study.pcc), "src": repr(study.src)}])
    print(f"samples {len(study.samples)}  PCC {study.pcc:.4f}  SRC {study.src:.4f}")
    return EXIT_OK


def _scores_from_results(path):
    records, _ = read_results(path)
    return [r.score for r in records]


def cmd_calibrate(args) -> int:
    if args.results:
        scores = _scores_from_results(args.results)
    elif args.bundle and args.queries:
        bundle = load_bundle(args.bundle)
        queries = load_queries(args.queries)
        scores = [query_score(bundle.index, q.global_descriptor, args.n_score) for q in queries]
    else:
        raise ConfigError("calibrate needs --results or both --bundle and --queries")
    try:
        gl, gh = analytics.calibrate_thresholds(scores, args.easy_fraction, args.hard_fraction)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    row = {"easy_fraction": args.easy_fraction, "hard_fraction": args.hard_fraction,
           "num_scores": len(scores), "gamma_low": repr(gl), "gamma_high": repr(gh)}
    if args.output:
        analytics.write_csv(args.output, [row])
    print(f"gamma_low = {gl:.6f}  gamma_high = {gh:.6f}  "
          f"(easy {args.easy_fraction}, hard {args.hard_fraction}, {len(scores)} scores)")
    return EXIT_OK


def cmd_report(args) -> int:
    queries = load_queries(args.queries)
    gt = queries.ground_truth()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, diff_rows, dist_rows = [], [], []
    for path in args.results:
        records, summary = read_results(path)
        if not records:
            raise BundleValidationError(f"{path}: no result records")
        summary = summary or {}
        es = analytics.summarize_errors(records, gt)
        label = Path(path).stem
        base = {"run": label, "mode": summary.get("mode"), "k": summary.get("k"),
                "mean_budget": float(np.mean([r.budget_k for r in records])),
                "total_pair_units": int(sum(r.pair_units for r in records))}
        rows.append({**base, **es.overall.row()})
        for d, st in es.by_difficulty.items():
            if d is not None:
                diff_rows.append({**base, "difficulty": d, **st.row()})
        if any(r.difficulty is not None for r in records):
            dist = analytics.difficulty_distribution(records)
            dist_rows.append({**base, "easy_pct": dist["easy"], "medium_pct": dist["medium"],
                              "hard_pct": dist["hard"]})

    fixed = sorted((r for r in rows if r["mode"] == "fixed" and r["k"] is not None), key=lambda r: r["k"])
    prev = None
    for r in rows:
        r["trend_violation"] = ""
    for r in fixed:
        if prev is not None and r["median_ate_m"] > prev["median_ate_m"]:
            r["trend_violation"] = "median_ate_increased"
            log.warning("median ATE rises from k=%s to k=%s", prev["k"], r["k"])
        prev = r

    cols = ["run", "mode", "k", "mean_budget", "total_pair_units", "count", "failed", "mean_ate_m",
            "median_ate_m", "mean_are_deg", "median_are_deg", "high_pct", "medium_pct", "low_pct",
            "trend_violation"]
    analytics.write_csv(out / "accuracy.csv", rows, cols)
    if diff_rows:
        analytics.write_csv(out / "accuracy_by_difficulty.csv", diff_rows,
                            ["run", "mode", "k", "difficulty"] + cols[5:14])
    if dist_rows:
        analytics.write_csv(out / "difficulty_distribution.csv", dist_rows,
                            ["run", "mode", "k", "mean_budget", "easy_pct", "medium_pct", "hard_pct"])
    for r in rows:
        flag = f"  [{r['trend_violation']}]" if r["trend_violation"] else ""
        print(f"{r['run']}: k={r['k']} budget={r['mean_budget']:.2f} median ATE={r['median_ate_m']:.4g} m "
              f"ARE={r['median_are_deg']:.4g} deg high/med/low={r['high_pct']:.1f}/{r['medium_pct']:.1f}/"
              f"{r['low_pct']:.1f}{flag}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="airloc", description="Adaptive-retrieval visual localisation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic bundle and query set")
    s.add_argument("--config", help="JSON world config (fields of WorldConfig)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inspect", help="print bundle statistics")
    s.add_argument("--bundle", required=True)
    s.set_defaults(func=cmd_inspect)

    s = sub.add_parser("localize", help="localize a query set (fixed or adaptive retrieval)")
    s.add_argument("--config", help="JSON run config; flags override it")
    s.add_argument("--bundle")
    s.add_argument("--queries")
    s.add_argument("--output", help="results file (one JSON record per line)")
    s.add_argument("--mode", choices=["fixed", "adaptive"])
    s.add_argument("--k", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--gamma-low", dest="gamma_low", type=float)
    s.add_argument("--gamma-high", dest="gamma_high", type=float)
    s.add_argument("--n-score", dest="n_score", type=int)
    s.add_argument("--ratio-threshold", dest="ratio_threshold", type=float)
    s.add_argument("--max-features", dest="max_features", type=int)
    s.add_argument("--ransac-max-iterations", dest="ransac_max_iterations", type=int)
    s.add_argument("--ransac-threshold", dest="ransac_threshold", type=float)
    s.add_argument("--ransac-confidence", dest="ransac_confidence", type=float)
    s.add_argument("--ransac-min-inliers", dest="ransac_min_inliers", type=int)
    s.add_argument("--parallelism", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_localize)

    s = sub.add_parser("correlate", help="similarity vs match-ratio study")
    s.add_argument("--bundle", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--k-eval", dest="k_eval", type=int, default=10)
    s.add_argument("--ratio-threshold", dest="ratio_threshold", type=float, default=0.9)
    s.add_argument("--output", required=True, help="CSV of (similarity, match_ratio) samples")
    s.add_argument("--summary", help="CSV with PCC and SRC")
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("calibrate", help="pick gamma thresholds from a score sample")
    s.add_argument("--results", help="results file whose scores are used")
    s.add_argument("--bundle")
    s.add_argument("--queries")
    s.add_argument("--n-score", dest="n_score", type=int, default=3)
    s.add_argument("--easy-fraction", dest="easy_fraction", type=float, required=True)
    s.add_argument("--hard-fraction", dest="hard_fraction", type=float, required=True)
    s.add_argument("--output", help="CSV with the threshold pair")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("report", help="accuracy / budget tables from result files")
    s.add_argument("--results", nargs="+", required=True)
    s.add_argument("--queries", required=True, help="query set with ground-truth poses")
    s.add_argument("--output-dir", dest="output_dir", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("AIRLOC_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, WorldConfigError) as exc:
        print(f"airloc {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"airloc {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (BundleFormatError, BundleValidationError, KeyError, ValueError) as exc:
        # ValueError here comes from malformed result files
        print(f"airloc {args.command}: invalid data: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

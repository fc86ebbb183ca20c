"""Command-line entry points: ``python -m wpod <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .driver import RunConfig, optimize, report_dict, shadow_compare
from .errors import WpodError
from .svd import TruncatedSvd, incremental_append, truncated_svd

log = logging.getLogger("wpod")


def _load_config(path, overrides: dict) -> RunConfig:
    data = json.loads(Path(path).read_text()) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(data)


def _parse_sizes(text: str) -> list[tuple[int, int, int]]:
    """``ROWSxCOLSxBLOCKS`` triples, comma separated (blocks defaults to 5)."""
    out = []
    for item in text.split(","):
        parts = [int(p) for p in item.lower().split("x")]
        if len(parts) == 2:
            parts.append(5)
        if len(parts) != 3 or min(parts) < 1:
            raise argparse.ArgumentTypeError(f"bad size {item!r}; expected ROWSxCOLS[xBLOCKS]")
        out.append(tuple(parts))
    return out


def svd_bench(sizes, seed: int = 0, out_dir=None) -> list[dict]:
    """Time streaming appends against one direct SVD of the assembled matrix."""
    rng = np.random.default_rng(seed)
    rows = []
    for n_rows, n_cols, n_blocks in sizes:
        blocks = [rng.standard_normal((n_rows, n_cols)) for _ in range(n_blocks)]
        t0 = time.perf_counter()
        cur = TruncatedSvd.empty(n_rows, 0)
        raw = np.zeros((n_rows, 0))
        corrections = 0
        for B in blocks:
            raw = np.hstack([raw, B])
            cur = incremental_append(cur, truncated_svd(B), raw)
            corrections += cur.n_corrections
        t_inc = time.perf_counter() - t0
        t0 = time.perf_counter()
        ref = truncated_svd(raw)
        t_dir = time.perf_counter() - t0
        k = min(cur.rank, ref.rank)
        rel = float(np.max(np.abs(cur.s[:k] - ref.s[:k]) / ref.s[:k])) if k else 0.0
        rows.append({
            "rows": n_rows, "block_cols": n_cols, "blocks": n_blocks, "rank": cur.rank,
            "t_incremental": t_inc, "t_direct": t_dir, "max_rel_sv_error": rel,
            "orthonormality_error": cur.orthonormality_error(), "corrections": corrections,
        })
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "svd_bench.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\r\n")
            w.writeheader()
            w.writerows(rows)
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wpod", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="run the optimization with one method")
    o.add_argument("--config", help="JSON run configuration")
    o.add_argument("--method", choices=["hdm", "global", "weighted", "weighted-deriv"])
    o.add_argument("--nr", type=int, help="reduced basis size")
    o.add_argument("--out", required=True, help="output directory")
    o.add_argument("--seed", type=int)

    s = sub.add_parser("shadow-compare", help="compare reduced models along a full-order trace")
    s.add_argument("--config", help="JSON run configuration")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)

    b = sub.add_parser("svd-bench", help="time streaming SVD updates")
    b.add_argument("--sizes", type=_parse_sizes, default=_parse_sizes("200x10,400x20,800x40"),
                   help="comma-separated ROWSxCOLS[xBLOCKS]")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "optimize":
            cfg = _load_config(args.config, {"method": args.method, "n_r": args.nr,
                                             "seed": args.seed})
            report, _ = optimize(cfg, args.out)
            print(json.dumps(report_dict(cfg, report), indent=2))
        elif args.command == "shadow-compare":
            cfg = _load_config(args.config, {"seed": args.seed})
            _, summary = shadow_compare(cfg, args.out)
            for row in summary:
                print(f"{row['method']:>15} n_r={row['n_r']:>3} "
                      f"median={row['median_rel_error']:.3e} count={row['count']}")
        else:
            for row in svd_bench(args.sizes, args.seed, args.out):
                print(f"{row['rows']}x{row['block_cols']}x{row['blocks']}: "
                      f"incremental {row['t_incremental']:.4f}s direct {row['t_direct']:.4f}s "
                      f"sv err {row['max_rel_sv_error']:.1e}")
    except (WpodError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

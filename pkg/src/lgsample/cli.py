"""Command-line pipeline: ingest, search, sample pairs, evaluate, loss-check.

Configuration precedence is flag > config file > environment (threads only)
> built-in default, and every report embeds the tool version, the fully
resolved configuration, and the seed, so a run is reproducible from its
report alone. Progress goes to stderr; machine output goes to files or
stdout. Exit codes: 1 for validation failures, 2 for I/O failures.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import ValidationError
from .fewshot import EpisodeSpec, run_fewshot
from .hashenc import DEFAULT_DIM, encode_captions
from .knn import read_neighbors, topk_exact, topk_scoped, write_neighbors
from .labels import fewshot_set, probe_splits, read_labels_csv
from .linprobe import ProbeConfig, default_cost_grid, sweep_and_fit
from .losses import (
    DEFAULT_TAU,
    clip_symmetric,
    fd_check,
    grad_infonce,
    grad_simsiam,
    infonce,
    simsiam_loss,
)
from .pairs import build_pairs, manifest_stats, write_manifest
from .store import EmbeddingMatrix, l2_normalize, read_store, write_store

THREADS_ENV = "LGSAMPLE_THREADS"


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _resolve_threads(flag: int | None, config: dict) -> int:
    if flag is not None:
        return flag
    if "threads" in config:
        return int(config["threads"])
    env = os.environ.get(THREADS_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValidationError(
                f"{THREADS_ENV} must be an integer, got {env!r}"
            ) from None
    return os.cpu_count() or 1


def _resolve(flag, config: dict, key: str, default):
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _envelope(command: str, config: dict, seed) -> dict:
    return {
        "tool": "lgsample",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
    }


def _write_json(path, payload: dict) -> None:
    text = json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as out:
        out.write(text)


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _run(fn):
    try:
        fn()
    except ValidationError as exc:
        _progress(f"error: {exc}")
        raise SystemExit(1)
    except OSError as exc:
        _progress(f"i/o error: {exc}")
        raise SystemExit(2)


@click.group()
@click.version_option(version=__version__, prog_name="lgsample")
@click.option(
    "--config",
    "config_path",
    type=click.Path(),
    default=None,
    help="TOML config file supplying defaults for flags.",
)
@click.pass_context
def main(ctx: click.Context, config_path: str | None) -> None:
    """Language-guided pair sampling and frozen-feature evaluation."""

    def load() -> None:
        ctx.obj = _load_config(config_path)

    _run(load)


@main.command()
@click.option("--captions", type=click.Path(), default=None,
              help="Captions JSONL ({'id', 'text', 'scope'?} per line).")
@click.option("--encoder", type=click.Choice(["hash"]), default="hash",
              show_default=True, help="Encoder for --captions input.")
@click.option("--dim", type=int, default=None, help=f"Hash-encoder dimension [default: {DEFAULT_DIM}].")
@click.option("--vectors", type=click.Path(), default=None,
              help="Raw float vectors as a .npy matrix.")
@click.option("--ids", "ids_path", type=click.Path(), default=None,
              help="Record ids, one per line (with --vectors).")
@click.option("--scopes", "scopes_path", type=click.Path(), default=None,
              help="Scope labels, one per line (with --vectors).")
@click.option("--normalize/--no-normalize", default=True, show_default=True)
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def ingest(ctx, captions, encoder, dim, vectors, ids_path, scopes_path,
           normalize, out):
    """Build a .lgem embedding store from captions or raw vectors."""

    def work() -> None:
        config = ctx.obj or {}
        dim_resolved = int(_resolve(dim, config, "dim", DEFAULT_DIM))
        if (captions is None) == (vectors is None):
            raise ValidationError("pass exactly one of --captions or --vectors")
        if captions is not None:
            records = []
            with open(captions, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        records.append(
                            (obj["id"], obj["text"], obj.get("scope"))
                        )
                    except (KeyError, TypeError, json.JSONDecodeError) as exc:
                        raise ValidationError(
                            f"{captions}: line {lineno}: {exc}"
                        ) from None
            matrix = encode_captions(records, dim=dim_resolved)
        else:
            if ids_path is None:
                raise ValidationError("--vectors needs --ids")
            arr = np.load(vectors, allow_pickle=False)
            ids = tuple(Path(ids_path).read_text(encoding="utf-8").splitlines())
            scopes = (
                tuple(Path(scopes_path).read_text(encoding="utf-8").splitlines())
                if scopes_path
                else None
            )
            matrix = EmbeddingMatrix(
                np.asarray(arr, dtype=np.float32), ids=ids, scope_labels=scopes
            )
            if normalize:
                matrix = l2_normalize(matrix)
        write_store(matrix, out)
        resolved = {
            "captions": captions,
            "vectors": vectors,
            "encoder": encoder if captions is not None else None,
            "dim": matrix.dim,
            "normalize": normalize,
            "out": str(out),
        }
        summary = _envelope("ingest", resolved, None)
        summary.update(
            {
                "n_records": matrix.n_records,
                "normalized": matrix.normalized,
                "scoped": matrix.scope_labels is not None,
            }
        )
        print(json.dumps(summary, ensure_ascii=False))

    _run(work)


@main.command(name="knn")
@click.argument("corpus_path", type=click.Path())
@click.option("--queries", "queries_path", type=click.Path(), default=None,
              help="Query store; defaults to searching the corpus against itself.")
@click.option("-k", type=int, default=None, help="Neighbors per query [default: 1].")
@click.option("--exclude-self/--include-self", default=True, show_default=True)
@click.option("--scope-mode", type=click.Choice(["global", "by-label"]),
              default="global", show_default=True)
@click.option("--block-size", type=int, default=None,
              help="Query block size for the kernel [default: 4096].")
@click.option("--threads", type=int, default=None)
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--stats", "stats_path", type=click.Path(), default=None,
              help="Stats/timing JSON [default: OUT.stats.json].")
@click.pass_context
def knn_command(ctx, corpus_path, queries_path, k, exclude_self, scope_mode,
                block_size, threads, out, stats_path):
    """Exact top-k cosine search; writes neighbors JSONL plus a stats JSON."""

    def work() -> None:
        config = ctx.obj or {}
        k_resolved = int(_resolve(k, config, "k", 1))
        block = int(_resolve(block_size, config, "block_size", 4096))
        n_threads = _resolve_threads(threads, config)
        corpus = read_store(corpus_path)
        started = time.perf_counter()
        if scope_mode == "by-label":
            if queries_path is not None:
                raise ValidationError(
                    "scope-mode by-label searches the corpus against itself; "
                    "--queries is not supported"
                )
            found = topk_scoped(corpus, k_resolved, block_size=block,
                                n_threads=n_threads)
            n_queries = corpus.n_records
            partitions = len(set(corpus.scope_labels))
        else:
            queries = read_store(queries_path) if queries_path else corpus
            found = topk_exact(
                corpus, queries, k_resolved, exclude_self=exclude_self,
                block_size=block, n_threads=n_threads,
            )
            n_queries = queries.n_records
            partitions = 1
        elapsed = time.perf_counter() - started
        write_neighbors(found, out)
        resolved = {
            "corpus": str(corpus_path),
            "queries": str(queries_path) if queries_path else None,
            "k": k_resolved,
            "exclude_self": exclude_self,
            "scope_mode": scope_mode,
            "block_size": block,
            "threads": n_threads,
            "out": str(out),
        }
        stats = _envelope("knn", resolved, None)
        stats.update(
            {
                "n_corpus": corpus.n_records,
                "n_queries": n_queries,
                "partition_count": partitions,
                "wall_seconds": elapsed,
                "records_per_second": n_queries / elapsed if elapsed > 0 else None,
            }
        )
        _write_json(stats_path or f"{out}.stats.json", stats)
        _progress(
            f"searched {n_queries} queries over {corpus.n_records} records "
            f"in {elapsed:.2f}s ({n_queries / max(elapsed, 1e-9):.0f} records/s)"
        )

    _run(work)


@main.command(name="sample-pairs")
@click.argument("neighbors_path", type=click.Path())
@click.option("--k-keep", type=int, default=None, help="Pairs per source [default: 1].")
@click.option("--min-sim", type=float, default=None,
              help="Drop pairs below this cosine similarity.")
@click.option("--scopes-from", type=click.Path(), default=None,
              help=".lgem store supplying per-source scope labels.")
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def sample_pairs(ctx, neighbors_path, k_keep, min_sim, scopes_from, out):
    """Turn neighbor lists into a positive-pair manifest (+ stats sidecar)."""

    def work() -> None:
        config = ctx.obj or {}
        k_resolved = int(_resolve(k_keep, config, "k_keep", 1))
        min_sim_resolved = _resolve(min_sim, config, "min_sim", None)
        neighbor_lists = read_neighbors(neighbors_path)
        scopes = None
        if scopes_from is not None:
            store = read_store(scopes_from)
            if store.scope_labels is None:
                raise ValidationError(f"{scopes_from} carries no scope labels")
            scopes = dict(zip(store.ids, store.scope_labels))
        built = build_pairs(
            neighbor_lists,
            k_keep=k_resolved,
            min_similarity=min_sim_resolved,
            scopes=scopes,
        )
        write_manifest(built.pairs, out)
        stats = manifest_stats(built.pairs)
        warnings = []
        if built.truncated_sources:
            warnings.append(
                f"{built.truncated_sources} sources had fewer than "
                f"{k_resolved} usable neighbors"
            )
        if not built.pairs:
            warnings.append("manifest is empty")
        resolved = {
            "neighbors": str(neighbors_path),
            "k_keep": k_resolved,
            "min_sim": min_sim_resolved,
            "scopes_from": str(scopes_from) if scopes_from else None,
            "out": str(out),
        }
        payload = _envelope("sample-pairs", resolved, None)
        payload.update(stats.to_json_dict())
        payload["truncated_sources"] = built.truncated_sources
        payload["warnings"] = warnings
        _write_json(f"{out}.stats.json", payload)
        _progress(f"wrote {stats.pair_count} pairs")

    _run(work)


@main.command(name="eval-fewshot")
@click.argument("features_path", type=click.Path())
@click.argument("labels_path", type=click.Path())
@click.option("--episodes", type=int, default=None, help="[default: 5000]")
@click.option("--seed", type=int, default=None, help="[default: 0]")
@click.option("--n-way", type=int, default=None, help="[default: 5]")
@click.option("--n-shot", type=int, default=None, help="[default: 5]")
@click.option("--n-query", type=int, default=None, help="[default: 5]")
@click.option("--threads", type=int, default=None)
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def eval_fewshot(ctx, features_path, labels_path, episodes, seed, n_way,
                 n_shot, n_query, threads, out):
    """Episodic few-shot evaluation with the weighted kNN classifier."""

    def work() -> None:
        config = ctx.obj or {}
        spec = EpisodeSpec(
            n_way=int(_resolve(n_way, config, "n_way", 5)),
            n_shot=int(_resolve(n_shot, config, "n_shot", 5)),
            n_query=int(_resolve(n_query, config, "n_query", 5)),
            episodes=int(_resolve(episodes, config, "episodes", 5000)),
            seed=int(_resolve(seed, config, "seed", 0)),
        )
        n_threads = _resolve_threads(threads, config)
        matrix = read_store(features_path)
        rows = read_labels_csv(labels_path)
        fset, dropped_val = fewshot_set(matrix, rows)
        report = run_fewshot(fset, spec, n_threads=n_threads)
        resolved = {
            "features": str(features_path),
            "labels": str(labels_path),
            "n_way": spec.n_way,
            "n_shot": spec.n_shot,
            "n_query": spec.n_query,
            "episodes": spec.episodes,
            "threads": n_threads,
            "out": str(out),
        }
        payload = _envelope("eval-fewshot", resolved, spec.seed)
        payload.update(
            {
                "mean": report.mean_accuracy,
                "ci95": report.ci95,
                "ci95_defined": report.ci95_defined,
                "episodes": report.episodes,
                "centering": report.centering,
                "ignored_val_records": dropped_val,
            }
        )
        _write_json(out, payload)
        print(
            f"fewshot mean={report.mean_accuracy:.4f} "
            f"ci95={report.ci95:.4f} episodes={report.episodes} seed={spec.seed}"
        )

    _run(work)


@main.command(name="eval-linprobe")
@click.argument("features_path", type=click.Path())
@click.argument("labels_path", type=click.Path())
@click.option("--metric", type=click.Choice(["accuracy", "mean-per-class"]),
              default=None, help="[default: accuracy]")
@click.option("--grid-points", type=int, default=None, help="[default: 96]")
@click.option("--max-iters", type=int, default=None, help="[default: 1000]")
@click.option("--standardize", is_flag=True, default=False,
              help="Standardize features on the fit split first.")
@click.option("--threads", type=int, default=None)
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def eval_linprobe(ctx, features_path, labels_path, metric, grid_points,
                  max_iters, standardize, threads, out):
    """Linear probe: cost sweep, validation selection, train+val refit."""

    def work() -> None:
        config = ctx.obj or {}
        metric_kind = _resolve(metric, config, "metric", "accuracy")
        points = int(_resolve(grid_points, config, "grid_points", 96))
        iters = int(_resolve(max_iters, config, "max_iters", 1000))
        n_threads = _resolve_threads(threads, config)
        probe_config = ProbeConfig(
            cost_grid=default_cost_grid(points),
            max_iterations=iters,
            metric_kind=metric_kind,
            standardize=standardize,
        )
        matrix = read_store(features_path)
        rows = read_labels_csv(labels_path)
        train, val, test, class_names = probe_splits(matrix, rows)
        report = sweep_and_fit(train, val, test, probe_config, n_threads=n_threads)
        resolved = {
            "features": str(features_path),
            "labels": str(labels_path),
            "metric": metric_kind,
            "grid_points": points,
            "max_iters": iters,
            "standardize": standardize,
            "threads": n_threads,
            "out": str(out),
        }
        payload = _envelope("eval-linprobe", resolved, None)
        payload.update(report.to_json_dict())
        payload["classes"] = list(class_names)
        _write_json(out, payload)
        print(
            f"linprobe {metric_kind}={report.test_metric:.4f} "
            f"best_cost={report.best_cost:.3g}"
        )

    _run(work)


@main.command(name="loss-check")
@click.argument("zs_path", type=click.Path())
@click.argument("zt_path", type=click.Path())
@click.option("--tau", type=float, default=None, help=f"[default: {DEFAULT_TAU}]")
@click.option("--epsilon", type=float, default=None,
              help="Finite-difference step [default: 1e-6].")
@click.option("--fd-rows", type=int, default=None,
              help="Rows used for the gradient check [default: 8].")
@click.pass_context
def loss_check(ctx, zs_path, zt_path, tau, epsilon, fd_rows):
    """Reference loss values and a finite-difference gradient report."""

    def work() -> None:
        config = ctx.obj or {}
        tau_resolved = float(_resolve(tau, config, "tau", DEFAULT_TAU))
        eps = float(_resolve(epsilon, config, "epsilon", 1e-6))
        rows = int(_resolve(fd_rows, config, "fd_rows", 8))
        zs_store = read_store(zs_path)
        zt_store = read_store(zt_path)
        zs = zs_store.vectors.astype(np.float64)
        zt = zt_store.vectors.astype(np.float64)
        if zs.shape != zt.shape:
            raise ValidationError(
                f"stores disagree on shape: {zs.shape} vs {zt.shape}"
            )
        losses = {
            "infonce_source_to_target": infonce(zs, zt, tau_resolved),
            "infonce_target_to_source": infonce(zt, zs, tau_resolved),
            "clip_symmetric": clip_symmetric(zs, zt, tau_resolved),
            # zs rows as predictions against zt targets and vice versa
            "simsiam": simsiam_loss(zs, zt, zs, zt),
        }
        sub_s = zs[:rows]
        sub_t = zt[:rows]
        fd = {
            "rows_checked": int(sub_s.shape[0]),
            "epsilon": eps,
            "infonce_max_rel_error": fd_check(
                lambda a: infonce(a[0], a[1], tau_resolved),
                lambda a: grad_infonce(a[0], a[1], tau_resolved),
                [sub_s, sub_t],
                epsilon=eps,
            ),
            "simsiam_max_rel_error": fd_check(
                lambda a: simsiam_loss(a[0], a[1], sub_s, sub_t),
                lambda a: grad_simsiam(a[0], a[1], sub_s, sub_t),
                [sub_s.copy(), sub_t.copy()],
                epsilon=eps,
            ),
        }
        resolved = {
            "zs": str(zs_path),
            "zt": str(zt_path),
            "tau": tau_resolved,
            "epsilon": eps,
            "fd_rows": rows,
        }
        payload = _envelope("loss-check", resolved, None)
        payload["losses"] = losses
        payload["finite_differences"] = fd
        print(json.dumps(payload, indent=2, ensure_ascii=False))

    _run(work)


if __name__ == "__main__":
    main()

"""Command-line pipeline: synth | ingest -> personality -> stats -> train -> eval -> breakdown -> plot.

Exit codes: 0 success, 1 training diverged, 2 input error, 3 format error,
4 configuration error.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .corpus import (
    SYNTHETIC_ALPHA,
    SYNTHETIC_TEMPERATURE,
    dataset_stats,
    filter_active,
    generate_synthetic,
    leave_one_out_split,
    parse_reviews,
    read_documents,
    read_interactions,
    write_documents,
    write_interactions,
)
from .errors import (
    ConfigError,
    DivergenceError,
    EmptyDatasetError,
    FormatError,
    ModeMismatchError,
    ProtocolError,
    RecordError,
)
from .evaluation import (
    EVAL_NEGATIVES,
    breakdown_by_trait,
    build_candidates,
    evaluate_candidates,
    read_ranks_csv,
    write_breakdown_csv,
    write_metrics_csv,
    write_ranks_csv,
)
from .model import MODES, PersonalityMode, build_context
from .personality import (
    DEFAULT_TEMPERATURE,
    PersonalityTable,
    Trait,
    import_scores_csv,
    lexicon_score,
    load_lexicon,
    trait_distribution,
    write_scores_csv,
)
from .training import TrainConfig, read_checkpoint, save_checkpoint, train

log = logging.getLogger("personality_ncf")

DATA_ENV = "PERSONALITY_NCF_DATA"

EXIT_OK, EXIT_DIVERGED, EXIT_INPUT, EXIT_FORMAT, EXIT_CONFIG = 0, 1, 2, 3, 4

INTERACTIONS = "interactions.csv"
INDEX = "index.csv"
DOCUMENTS = "documents.jsonl"
PERSONALITY = "personality.csv"


class InputError(Exception):
    pass


def default_data_dir():
    return Path(os.environ.get(DATA_ENV, "data"))


def _ks(text):
    try:
        ks = tuple(sorted({int(k) for k in text.split(",") if k.strip()}))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad K list {text!r}") from None
    if not ks or ks[0] < 1:
        raise argparse.ArgumentTypeError("K values must be >= 1")
    return ks


def _eval_negatives(text):
    if text == "all":
        return None
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a count or 'all'") from None
    if n < 1:
        raise argparse.ArgumentTypeError("need at least one negative")
    return n


def _range(text):
    try:
        low, high = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LOW,HIGH") from None
    if not high > low:
        raise argparse.ArgumentTypeError("HIGH must exceed LOW")
    return low, high


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def _load_interactions(data_dir):
    path = Path(data_dir) / INTERACTIONS
    if not path.exists():
        raise InputError(f"{path} not found; run 'synth' or 'ingest' first")
    index = Path(data_dir) / INDEX
    return read_interactions(path, index if index.exists() else None)


def _load_personality(path, required):
    if path is None or not Path(path).exists():
        if required:
            raise ConfigError(f"personality scores needed but {path} not found; run 'personality' or pass --personality")
        return None
    return import_scores_csv(path, (0, 100))


def _mode_from_args(args):
    try:
        trait = Trait.parse(args.same_trait)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return PersonalityMode(args.mode, seed=args.seed, trait=trait, temperature=args.temperature)


def cmd_synth(args):
    out = Path(args.out or default_data_dir())
    out.mkdir(parents=True, exist_ok=True)
    try:
        data = generate_synthetic(
            args.users, args.items, args.per_user, args.signal, args.seed, args.alpha, args.weight_temperature
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    write_interactions(data.interactions, out / INTERACTIONS, out / INDEX)
    write_scores_csv(data.personalities, out / PERSONALITY)
    print(f"wrote {data.interactions.n_users} users, {data.interactions.n_items} items, "
          f"{data.interactions.n_interactions} interactions to {out}")


def cmd_ingest(args):
    out = Path(args.out or default_data_dir())
    try:
        with open(args.reviews, encoding="utf-8") as f:
            errors = []
            records = parse_reviews(f, errors=errors)
    except OSError as e:
        raise InputError(f"cannot read {args.reviews}: {e.strerror}") from None
    except UnicodeDecodeError:
        raise FormatError(f"{args.reviews} is not UTF-8") from None
    for e in errors:
        log.warning("skipped %s", e)
    if not records:
        raise EmptyDatasetError(f"{args.reviews}: empty dataset")
    docs, inter = filter_active(
        records, args.min_items, args.min_words, args.max_words, require_all_qualifying=args.strict
    )
    users_before = len({r.reviewer_id for r in records})
    kept = {d.user_id for d in docs}
    reviews_kept = sum(1 for r in records if r.reviewer_id in kept)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(inter, out / INTERACTIONS, out / INDEX)
    write_documents(docs, out / DOCUMENTS)
    rows = [
        ("lines_skipped", len(errors)),
        ("users_before", users_before),
        ("users_retained", len(docs)),
        ("reviews_kept", reviews_kept),
        ("reviews_dropped", len(records) - reviews_kept),
    ]
    _write_rows(out / "filter_report.csv", ["count", "value"], rows)
    for name, v in rows:
        print(f"{name:<16}{v:>10}")


def cmd_stats(args):
    data_dir = Path(args.data or default_data_dir())
    inter = _load_interactions(data_dir)
    docs_path = data_dir / DOCUMENTS
    docs = read_documents(docs_path) if docs_path.exists() else None
    rows = [(k, _fmt(v)) for k, v in dataset_stats(inter, docs).rows()]
    width = max(len(k) for k, _ in rows) + 2
    for k, v in rows:
        print(f"{k:<{width}}{v:>14}")
    if args.csv:
        _write_rows(args.csv, ["stat", "value"], rows)


def cmd_personality(args):
    if args.source == "import":
        if not args.csv:
            raise ConfigError("--source import needs --csv")
        try:
            table = import_scores_csv(args.csv, args.range)
        except FileNotFoundError:
            raise InputError(f"{args.csv} not found") from None
    else:
        data_dir = Path(args.data or default_data_dir())
        docs_path = Path(args.docs) if args.docs else data_dir / DOCUMENTS
        if not docs_path.exists():
            raise InputError(f"{docs_path} not found; run 'ingest' first")
        lexicon = load_lexicon(args.lexicon)
        table = PersonalityTable()
        for d in read_documents(docs_path):
            table.add(d.user_id, lexicon_score(d.text, lexicon), "lexicon")
    if not len(table):
        raise EmptyDatasetError("no users to score")
    out = Path(args.out) if args.out else Path(args.data or default_data_dir()) / PERSONALITY
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scores_csv(table, out)
    print(f"wrote {len(table)} users to {out}")


def _split(args):
    inter = _load_interactions(Path(args.data or default_data_dir()))
    return leave_one_out_split(inter, seed=args.seed, policy=args.holdout)


def _personality_path(args):
    if args.personality:
        return Path(args.personality)
    return Path(args.data or default_data_dir()) / PERSONALITY


def cmd_train(args):
    mode = _mode_from_args(args)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        negatives_per_positive=args.negatives,
        learning_rate=args.lr,
        patience=args.patience if args.patience is not None else min(5, max(args.epochs, 1)),
        seed=args.seed,
        eval_negatives=args.eval_negatives,
        freeze_trait_emb=args.freeze_trait_emb,
    )
    personalities = _load_personality(_personality_path(args), mode.kind in ("salient", "soft", "hard"))
    split = _split(args)
    result = train(split, mode, config, personalities=personalities)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.params, out, seed=args.seed, epoch=max(result.best_epoch, 0))
    log_path = Path(args.log) if args.log else out.with_suffix(".epochs.csv")
    _write_rows(log_path, ["epoch", "loss", "hr@10", "ndcg@10"],
                [(r.epoch, f"{r.loss:.6f}", f"{r.hr:.6f}", f"{r.ndcg:.6f}") for r in result.reports])
    for r in result.reports:
        print(f"epoch {r.epoch:>3}  loss {r.loss:.5f}  HR@10 {r.hr:.4f}  NDCG@10 {r.ndcg:.4f}  {r.seconds:.1f}s")
    print(f"best epoch {result.best_epoch}; checkpoint {out}")


def cmd_eval(args):
    try:
        ck = read_checkpoint(args.checkpoint, args.mode)
    except ModeMismatchError as e:
        raise ModeMismatchError(f"{e}; drop --mode or pass the matching checkpoint") from None
    params = ck.params
    if args.seed is None:
        args.seed = ck.seed
    split = _split(args)
    if (params.n_users, params.n_items) != (split.train.n_users, split.train.n_items):
        raise ConfigError(
            f"checkpoint is for {params.n_users} users x {params.n_items} items but the data has "
            f"{split.train.n_users} x {split.train.n_items}; evaluate on the data it was trained on"
        )
    personalities = _load_personality(_personality_path(args), params.mode.kind in ("salient", "soft", "hard"))
    context = build_context(params.mode, split.train.users, personalities)
    cands = build_candidates(split, args.seed, args.eval_negatives)
    report = evaluate_candidates(params, cands, context, args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report, out)
    ranks_path = Path(args.ranks) if args.ranks else out.with_suffix(".ranks.csv")
    write_ranks_csv([split.train.users[u] for u in report.users], report.ranks, ranks_path)
    for name, k, v in report.rows():
        print(f"{name}@{k:<3} {v:.4f}")
    print(f"{report.n_users} users evaluated")


def cmd_breakdown(args):
    if not Path(args.ranks).exists():
        raise InputError(f"{args.ranks} not found; run 'eval' first")
    users, ranks = read_ranks_csv(args.ranks)
    if not users:
        raise EmptyDatasetError("no evaluated users in ranks file")
    personalities = _load_personality(_personality_path(args), True)
    try:
        b = breakdown_by_trait(users, ranks, personalities, k=args.k)
    except ProtocolError as e:
        raise ConfigError(f"{e}; pass the personality file the model was evaluated with") from None
    write_breakdown_csv(b, args.out)
    for t in Trait:
        print(f"{t.short:<5}{b.counts[t]:>6}  HR@{args.k} {b.hr[t]:.4f}  NDCG@{args.k} {b.ndcg[t]:.4f}")
    print(f"total {b.total}")


def histogram_svg(summary, title, width=480, height=320):
    """Self-contained SVG bar chart over [0, 100] with a red median line."""
    left, right, top, bottom = 48, 16, 32, 40
    pw, ph = width - left - right, height - top - bottom
    counts = summary.counts
    peak = max(int(counts.max()), 1)
    n = len(counts)
    bar_w = pw / n

    def x_of(v):
        return left + pw * v / 100.0

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
    ]
    for i, c in enumerate(counts):
        h = ph * int(c) / peak
        parts.append(
            f'<rect x="{left + i * bar_w:.2f}" y="{top + ph - h:.2f}" width="{bar_w:.2f}" '
            f'height="{h:.2f}" fill="#4c72b0" stroke="white" stroke-width="0.5"/>'
        )
    parts.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    parts.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    for v in range(0, 101, 20):
        parts.append(f'<text x="{x_of(v):.2f}" y="{top + ph + 14}" text-anchor="middle">{v}</text>')
    parts.append(f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{peak}</text>')
    parts.append(f'<text x="{left - 6}" y="{top + ph}" text-anchor="end">0</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 6}" text-anchor="middle">score</text>')
    mx = x_of(summary.median)
    parts.append(f'<line x1="{mx:.2f}" y1="{top}" x2="{mx:.2f}" y2="{top + ph}" stroke="red" stroke-width="2"/>')
    parts.append(f'<text x="{mx + 4:.2f}" y="{top + 10}" fill="red">median {summary.median:.2f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args):
    path = _personality_path(args)
    if not path.exists():
        raise InputError(f"{path} not found")
    table = import_scores_csv(path, (0, 100))
    if not len(table):
        raise EmptyDatasetError(f"{path}: empty dataset")
    dist = trait_distribution(table, bins=args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t in Trait:
        s = dist[t]
        with open(out / f"{t.column}.svg", "w", encoding="utf-8", newline="\n") as f:
            f.write(histogram_svg(s, f"{t.name.title()} (n={len(table)})"))
        rows.append((t.column, f"{s.median:.6f}", f"{s.mean:.6f}"))
    _write_rows(out / "summary.csv", ["trait", "median", "mean"], rows)
    print(f"wrote 5 histograms and summary.csv to {out}")


def _add_data(p):
    p.add_argument("--data", help=f"data directory (default ${DATA_ENV} or ./data)")


def _add_split(p, seed_default=0):
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--holdout", choices=("random", "last"), default="random")


def _add_personality(p):
    p.add_argument("--personality", help=f"personality CSV (default DATA/{PERSONALITY})")


def build_parser():
    parser = argparse.ArgumentParser(prog="personality-ncf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a personality-correlated synthetic dataset")
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--per-user", type=int, default=20)
    p.add_argument("--signal", type=float, default=0.8)
    p.add_argument("--alpha", type=float, default=SYNTHETIC_ALPHA, help="Dirichlet concentration of item affinities")
    p.add_argument("--weight-temperature", type=float, default=SYNTHETIC_TEMPERATURE,
                   help="softmax temperature turning user scores into trait weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default: data directory)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="filter a JSON-lines review dump into interactions and documents")
    p.add_argument("reviews")
    p.add_argument("--out", help="output directory (default: data directory)")
    p.add_argument("--min-items", type=int, default=10)
    p.add_argument("--min-words", type=int, default=30)
    p.add_argument("--max-words", type=int, default=80)
    p.add_argument("--strict", action="store_true", help="drop users with any review outside the word range")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="print dataset statistics")
    _add_data(p)
    p.add_argument("--csv", help="also write the statistics as CSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("personality", help="score users with the lexicon or import scores")
    _add_data(p)
    p.add_argument("--source", choices=("lexicon", "import"), default="lexicon")
    p.add_argument("--docs", help=f"user documents (default DATA/{DOCUMENTS})")
    p.add_argument("--lexicon", help="lexicon CSV (default: bundled demonstration lexicon)")
    p.add_argument("--csv", help="scores to import")
    p.add_argument("--range", type=_range, default=(0.0, 100.0), help="source score range LOW,HIGH")
    p.add_argument("--out", help=f"output CSV (default DATA/{PERSONALITY})")
    p.set_defaults(func=cmd_personality)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_data(p)
    _add_split(p)
    _add_personality(p)
    p.add_argument("--mode", choices=MODES, default="plain")
    p.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    p.add_argument("--same-trait", default="openness")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--negatives", type=int, default=4, help="sampled negatives per positive")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-negatives", type=_eval_negatives, default=EVAL_NEGATIVES, metavar="{99,all}")
    p.add_argument("--freeze-trait-emb", action="store_true")
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--log", help="per-epoch CSV (default: OUT with .epochs.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank held-out items and write HR/NDCG")
    _add_data(p)
    _add_split(p, seed_default=None)
    _add_personality(p)
    p.add_argument("--checkpoint", default="model.ckpt")
    p.add_argument("--mode", choices=MODES, help="require the checkpoint to hold this mode")
    p.add_argument("--k", type=_ks, default=(3, 5, 10))
    p.add_argument("--eval-negatives", type=_eval_negatives, default=EVAL_NEGATIVES, metavar="{99,all}")
    p.add_argument("--out", default="metrics.csv")
    p.add_argument("--ranks", help="per-user ranks CSV (default: OUT with .ranks.csv)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("breakdown", help="HR/NDCG grouped by most salient trait")
    _add_data(p)
    _add_personality(p)
    p.add_argument("--ranks", default="metrics.ranks.csv")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out", default="breakdown.csv")
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("plot", help="per-trait score histograms as SVG")
    _add_data(p)
    _add_personality(p)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", default="plots")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except (InputError, EmptyDatasetError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (RecordError, FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"error: {e}; try a smaller --lr", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

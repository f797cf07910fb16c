"""Command-line interface: corpus generation, index/model/ranker training,
evaluation, and the chat frontends (terminal REPL + HTTP server)."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .cdssm import CdssmConfig, CdssmModel, train_cdssm
from .corpus import FilterConfig, load_blocklist, load_pairs, load_triples, write_pairs_jsonl
from .evaluation import (
    SYSTEMS,
    EvalConfig,
    aggregate_judgments,
    load_judgments,
    run_eval,
    train_system_ensembles,
    write_report,
)
from .index import InvertedIndex, build_index
from .ranker import MartConfig, build_training_set, train_mart
from .service import ChatService, create_app, load_service, new_session_id
from .synth import DeskCorpusConfig, make_desk_corpus


def _filter_config(blocklist_path) -> FilterConfig:
    if blocklist_path:
        return FilterConfig(blocklist=load_blocklist(blocklist_path))
    return FilterConfig()


@click.group()
def main():
    """Retrieval chatbot: index, semantic model, reranker, eval, chat."""


@main.command("synth-corpus")
@click.option("--out-dir", type=click.Path(file_okay=False), default="data", show_default=True)
@click.option("--pairs", "n_pairs", type=int, default=3000, show_default=True)
@click.option("--triples", "n_triples", type=int, default=1400, show_default=True)
@click.option("--topics", type=int, default=40, show_default=True)
@click.option("--seed", type=int, default=11, show_default=True)
def synth_corpus(out_dir, n_pairs, n_triples, topics, seed):
    """Generate a synthetic desk-scale corpus (pairs + triples JSONL)."""
    cfg = DeskCorpusConfig(n_pairs=n_pairs, n_triples=n_triples, n_topics=topics, seed=seed)
    pair_rows, triple_rows = make_desk_corpus(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pairs_jsonl(out / "desk_pairs.jsonl", pair_rows)
    write_pairs_jsonl(out / "desk_triples.jsonl", triple_rows)
    click.echo(f"wrote {len(pair_rows)} pairs and {len(triple_rows)} triples to {out}/")


@main.command("build-index")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--blocklist", type=click.Path(exists=True), default=None)
def build_index_cmd(pairs_path, out_path, blocklist):
    """Build and persist the TF-IDF index over a pairs file."""
    pairs, rejected = load_pairs(pairs_path, _filter_config(blocklist))
    idx = build_index(pairs)
    idx.save(out_path)
    click.echo(f"indexed {len(pairs)} pairs ({rejected} rejected) -> {out_path}")


@main.command("train-cdssm")
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--vocab-max", type=int, default=5000, show_default=True)
@click.option("--conv-window", type=int, default=3, show_default=True)
@click.option("--conv-dim", type=int, default=300, show_default=True)
@click.option("--sem-dim", type=int, default=128, show_default=True)
@click.option("--gamma", type=float, default=10.0, show_default=True)
@click.option("--neg-per-pos", type=int, default=4, show_default=True)
@click.option("--learning-rate", type=float, default=0.1, show_default=True)
@click.option("--minibatch", type=int, default=16, show_default=True)
@click.option("--blocklist", type=click.Path(exists=True), default=None)
def train_cdssm_cmd(pairs_path, out_path, epochs, seed, vocab_max, conv_window, conv_dim,
                    sem_dim, gamma, neg_per_pos, learning_rate, minibatch, blocklist):
    """Train the twin-tower semantic model on a pairs file."""
    pairs, rejected = load_pairs(pairs_path, _filter_config(blocklist))
    cfg = CdssmConfig(
        vocab_max=vocab_max,
        conv_window=conv_window,
        conv_dim=conv_dim,
        sem_dim=sem_dim,
        gamma=gamma,
        neg_per_pos=neg_per_pos,
        learning_rate=learning_rate,
        epochs=epochs,
        minibatch=minibatch,
        seed=seed,
    )
    click.echo(f"training on {len(pairs)} pairs ({rejected} rejected)")
    model, report = train_cdssm(pairs, cfg)
    for i, loss in enumerate(report.epoch_losses):
        click.echo(f"epoch {i}: mean loss {loss:.6f}")
    model.save(out_path)
    click.echo(f"saved model -> {out_path}")


@main.command("train-ranker")
@click.option("--triples", "triples_path", required=True, type=click.Path(exists=True))
@click.option("--cdssm", "cdssm_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trees", type=int, default=100, show_default=True)
@click.option("--max-depth", type=int, default=3, show_default=True)
@click.option("--learning-rate", type=float, default=0.1, show_default=True)
@click.option("--negatives", type=int, default=2, show_default=True)
@click.option("--blocklist", type=click.Path(exists=True), default=None)
def train_ranker_cmd(triples_path, cdssm_path, out_path, seed, trees, max_depth,
                     learning_rate, negatives, blocklist):
    """Train the boosted-tree ranker on 3-turn conversations."""
    triples, rejected = load_triples(triples_path, _filter_config(blocklist))
    model = CdssmModel.load(cdssm_path)
    samples = build_training_set(model, triples, negatives_per_positive=negatives, seed=seed)
    cfg = MartConfig(n_trees=trees, max_depth=max_depth, learning_rate=learning_rate, seed=seed)
    ens = train_mart(samples, cfg)
    ens.save(out_path)
    click.echo(
        f"trained {trees} trees on {len(triples)} conversations ({rejected} rejected); "
        f"final training NDCG@1 {ens.training_ndcg1[-1]:.4f}" if ens.training_ndcg1 else "done"
    )
    click.echo(f"saved ensemble -> {out_path}")


@main.command("eval")
@click.option("--heldout", required=True, type=click.Path(exists=True))
@click.option("--train", "train_path", required=True, type=click.Path(exists=True),
              help="Triples used to train the per-system ensembles.")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--cdssm", "cdssm_path", required=True, type=click.Path(exists=True))
@click.option("--systems", default="all", show_default=True,
              help='"all" or comma-separated subset of: ' + ", ".join(SYSTEMS))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--distractors", type=int, default=9, show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--judgments", type=click.Path(exists=True), default=None,
              help="Optional JSONL vote file to aggregate into the report.")
def eval_cmd(heldout, train_path, index_path, cdssm_path, systems, seed, distractors,
             report_path, judgments):
    """Ablation eval over held-out triples; writes a TSV report."""
    selected = SYSTEMS if systems == "all" else tuple(s.strip() for s in systems.split(","))
    cfg = EvalConfig(heldout=heldout, distractors_per_query=distractors,
                     systems=selected, seed=seed)
    cfg.validate()
    index = InvertedIndex.load(index_path)
    model = CdssmModel.load(cdssm_path)
    train_triples, _ = load_triples(train_path)
    learned = tuple(s for s in selected if s != "ir_status")
    ensembles = train_system_ensembles(model, train_triples, systems=learned, seed=seed)
    metrics = run_eval(cfg, index, model, ensembles)
    summary = None
    if judgments:
        records = load_judgments(judgments)
        mean, p1 = aggregate_judgments(records)
        summary = (mean, p1, len(records))
    write_report(report_path, metrics, summary)
    for system, m in metrics.items():
        click.echo(
            f"{system}: R@1 {m.r_at_1:.3f}  NDCG@1 {m.ndcg_at_1:.3f} "
            f"NDCG@2 {m.ndcg_at_2:.3f} NDCG@3 {m.ndcg_at_3:.3f} (n={m.n_queries})"
        )
    click.echo(f"report -> {report_path}")


def _load_service_from_opts(index_path, cdssm_path, ranker_path, k, fallback) -> ChatService:
    kwargs = {"fetch_k": k}
    if fallback is not None:
        kwargs["fallback_text"] = fallback
    return load_service(index_path, cdssm_path, ranker_path, **kwargs)


@main.command("chat")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--cdssm", "cdssm_path", required=True, type=click.Path(exists=True))
@click.option("--ranker", "ranker_path", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=100, show_default=True)
@click.option("--fallback", default=None, help="Reply used when retrieval is empty.")
@click.option("--debug", is_flag=True, help="Print the ranked trace after each reply.")
def chat_cmd(index_path, cdssm_path, ranker_path, k, fallback, debug):
    """Interactive terminal chat (reads stdin until EOF or /quit)."""
    service = _load_service_from_opts(index_path, cdssm_path, ranker_path, k, fallback)
    session_id = new_session_id()
    click.echo("chatrank ready. /quit to exit.")
    while True:
        try:
            line = input("you> ")
        except EOFError:
            break
        line = line.strip()
        if line in ("/quit", "/exit"):
            break
        if not line:
            continue
        try:
            text, trace = service.respond(session_id, line)
        except ValueError as exc:
            click.echo(f"[error] {exc}")
            continue
        click.echo(f"bot> {text}")
        if debug:
            click.echo(f"  [candidates: {trace.candidate_count}, fallback: {trace.fallback}]")
            for cand in trace.top:
                click.echo(f"  doc {cand.doc_id} score {cand.score:.4f}: {cand.response}")


@main.command("serve")
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--cdssm", "cdssm_path", required=True, type=click.Path(exists=True))
@click.option("--ranker", "ranker_path", required=True, type=click.Path(exists=True))
@click.option("--static", "static_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory with the built web client.")
@click.option("--k", type=int, default=100, show_default=True)
@click.option("--fallback", default=None)
def serve_cmd(port, host, index_path, cdssm_path, ranker_path, static_dir, k, fallback):
    """Serve the HTTP chat API (and the web client when --static is given)."""
    import uvicorn

    service = _load_service_from_opts(index_path, cdssm_path, ranker_path, k, fallback)
    app = create_app(service, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())

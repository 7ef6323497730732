"""Command-line surface.

Subcommands: generate | partition | train | eval | export-embeddings |
aggregate-demo.  Success exits 0; failures exit nonzero after printing a
machine-readable error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, parse_config
from .evaluation import EvaluationError, evaluate
from .federation import FederationError, ParameterServer, ClientUpdate
from .graph import GraphError, HeterogeneousGraph, load_graph, write_graph
from .model import ModelError, shape_manifest, unpack_shared
from .simulation import (
    SimulationError,
    build_experiment,
    partition,
    run_experiment,
    synthetic_hin,
)
from .storage import (
    RunManifest,
    StorageError,
    dataset_fingerprint,
    export_embeddings,
    load_checkpoint,
    read_manifest,
    save_checkpoint,
    write_jsonl,
    write_manifest,
)

_ERRORS = (
    ConfigError,
    EvaluationError,
    FederationError,
    GraphError,
    ModelError,
    SimulationError,
    StorageError,
    FileNotFoundError,
)


def _load_dataset(data_dir: str, config: ExperimentConfig) -> HeterogeneousGraph:
    data = Path(data_dir)
    schema_path = data / "schema.json"
    with open(schema_path) as fh:
        schema_doc = json.load(fh)
    return load_graph(
        data / "nodes.csv",
        data / "edges.csv",
        schema=[tuple(t) for t in schema_doc["triples"]],
        target_type=schema_doc.get("target_type", config.target_type),
    )


def cmd_generate(args) -> int:
    graph = synthetic_hin(
        n_authors=args.authors,
        n_papers=args.papers,
        n_venues=args.venues,
        classes=args.classes,
        p_in=args.p_in,
        p_out=args.p_out,
        seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(out / "nodes.csv", out / "edges.csv", graph)
    with open(out / "schema.json", "w") as fh:
        json.dump(
            {"triples": [list(t) for t in sorted(graph.schema)], "target_type": graph.target_type},
            fh,
            indent=2,
        )
        fh.write("\n")
    print(json.dumps({"nodes": graph.num_nodes, "edges": graph.num_edges, "out": str(out)}))
    return 0


def cmd_partition(args) -> int:
    config = parse_config(args.config) if args.config else ExperimentConfig()
    graph = _load_dataset(args.data, config)
    part = partition(
        graph,
        args.clients if args.clients is not None else config.clients,
        strategy=config.partition_strategy,
        seed=config.seed,
        dirichlet_alpha=config.dirichlet_alpha,
    )
    doc = {str(cid): nodes.tolist() for cid, nodes in enumerate(part.client_nodes)}
    with open(args.out, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    print(json.dumps({"clients": part.n_clients, "out": args.out}))
    return 0


def cmd_train(args) -> int:
    if args.manifest:
        manifest = read_manifest(args.manifest)
        config = ExperimentConfig.from_dict(manifest.config)
        data_dir = manifest.data_dir
    else:
        config = parse_config(args.config) if args.config else ExperimentConfig()
        data_dir = args.data
    if data_dir is None:
        raise ConfigError("train needs --data (or a manifest that records it)")
    graph = _load_dataset(data_dir, config)

    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    data_files = [Path(data_dir) / n for n in ("nodes.csv", "edges.csv", "schema.json")]
    outputs = {
        "metrics": str(run_dir / "metrics.jsonl"),
        "decisions": str(run_dir / "decisions.jsonl"),
        "checkpoint": str(run_dir / "checkpoint.npz"),
        "config": str(run_dir / "config.json"),
    }
    manifest = RunManifest(
        config=config.to_dict(),
        seed=config.seed,
        code_version=__version__,
        dataset_fingerprint=dataset_fingerprint(data_files),
        data_dir=str(data_dir),
        outputs=outputs,
    )
    write_manifest(run_dir / "manifest.json", manifest)
    with open(outputs["config"], "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    setup = build_experiment(config, graph)
    records = []
    for record in run_experiment(config, graph, setup=setup, diagnostics_dir=run_dir):
        records.append(record)
    write_jsonl(outputs["metrics"], records)
    write_jsonl(outputs["decisions"], setup.server.decision_log)

    final = setup.initial_params.copy()
    if setup.server.version_records:
        unpack_shared(setup.server.current_aggregate(), final)
    save_checkpoint(outputs["checkpoint"], final)

    last = records[-1]
    print(json.dumps({"rounds": last.round, "micro_f1": last.micro_f1, "out": str(run_dir)}))
    return 0


def _restore_model(args):
    config = parse_config(args.config) if args.config else ExperimentConfig()
    graph = _load_dataset(args.data, config)
    setup = build_experiment(config, graph)
    flat, pref, _ = load_checkpoint(
        args.checkpoint, expected_manifest=shape_manifest(setup.initial_params)
    )
    params = setup.initial_params.copy()
    unpack_shared(flat, params)
    if pref.shape == params.pref.shape:
        params.pref[...] = pref
    return config, graph, setup, params


def cmd_eval(args) -> int:
    _, _, setup, params = _restore_model(args)
    micro, macro = evaluate(setup.model, params, setup.labels, setup.split)
    print(
        json.dumps(
            {"micro_f1": micro, "macro_f1": macro, "n_test": int(setup.split.test_nodes.size)}
        )
    )
    return 0


def cmd_export_embeddings(args) -> int:
    config, graph, setup, params = _restore_model(args)
    target_ids = graph.nodes_of_type(config.target_type)
    embeddings = setup.model.embed(params)
    export_embeddings(args.out, target_ids, embeddings)
    print(json.dumps({"nodes": len(target_ids), "dim": embeddings.shape[1], "out": args.out}))
    return 0


def cmd_aggregate_demo(args) -> int:
    """Replay the staleness-weighted aggregation on a supplied record table."""
    with open(args.records) as fh:
        doc = json.load(fh)
    records = doc["records"]
    alpha = float(doc.get("alpha", args.alpha))
    server = ParameterServer(
        client_ids=[r["client"] for r in records],
        aggregator="staleness",
        staleness_exponent=alpha,
        gap_threshold=doc.get("gap_threshold", 5),
    )
    for r in records:
        server.submit(
            ClientUpdate(
                client_id=r["client"],
                weights=np.asarray(r["weights"], dtype=np.float64),
                version=int(r["version"]),
            )
        )
    ids, coeffs = server.staleness_coefficients()
    latest = server.latest_version()
    aggregated = server.aggregate_staleness_weighted()
    print(
        json.dumps(
            {
                "alpha": alpha,
                "latest_version": latest,
                "clients": ids,
                "version_gaps": [latest - server.version_records[c] for c in ids],
                "coefficients": coeffs.tolist(),
                "aggregate": aggregated.tolist(),
                "max_version_gap": server.max_version_gap(),
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedhin",
        description="Federated heterogeneous-network embedding simulator",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic academic graph to files")
    p.add_argument("--out", required=True)
    p.add_argument("--authors", type=int, default=400)
    p.add_argument("--papers", type=int, default=1500)
    p.add_argument("--venues", type=int, default=20)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.05, dest="p_in")
    p.add_argument("--p-out", type=float, default=0.005, dest="p_out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("partition", help="split labeled nodes across clients")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--clients", type=int)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run a federated experiment from a config file")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--manifest", help="replay a previous run from its manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the held-out test nodes")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-embeddings", help="write fused node embeddings to CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("aggregate-demo", help="replay staleness weighting on a record table")
    p.add_argument("--records", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_aggregate_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())

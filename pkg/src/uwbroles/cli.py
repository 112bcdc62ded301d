"""Command-line driver.

Subcommands:
  simulate         run a scenario, allocation computed by direct library call
  simulate-ledger  same scenario, allocation routed through the smart contract
  bench            allocation latency measurement (direct or ledger mode)
  verify           audit an exported block chain and replay its history
  report           tables, trajectory CSVs and figures from a finished run

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .allocation import RoleAssignment
from .bench import run_bench
from .ledger import LedgerNetwork
from .ledger.audit import audit_export
from .ledger.chain import ChainIntegrityError, write_ndjson
from .ledger.codec import position_to_mm
from .ledger.network import LedgerError
from .reporting import generate_report
from .simulation import ConfigError, SimConfig, run_scenario


class LedgerAllocator:
    """Routes each epoch's allocation through the contracts.

    Per epoch: one path-history transaction and one position transaction per
    node (batched, then flushed into blocks), then the allocate invocation
    whose committed write is the decision the scenario continues with.
    """

    def __init__(self, config: SimConfig):
        self.config = config
        orgs = [f"org{nid}" for nid in config.mobile_ids]
        self.node_orgs = {nid: f"org{nid}" for nid in config.mobile_ids}
        self.client_org = orgs[0]
        self.network = LedgerNetwork(orgs, node_orgs=self.node_orgs, seed=config.seed)

    def _org_of(self, nid: int) -> str:
        return self.node_orgs.get(nid, self.client_org)

    def __call__(self, epoch: int, positions) -> RoleAssignment:
        net = self.network
        tx_ids = []
        for nid in sorted(positions):
            mm = list(position_to_mm(positions[nid]))
            args = {"node": nid, "epoch": epoch, "pos_mm": mm}
            for contract, function in (
                ("path_history", "record_path"),
                ("role_allocation", "report_position"),
            ):
                proposal = net.propose(contract, function, args, self._org_of(nid))
                endorsements = net.collect_endorsements(proposal)
                tx_ids.append(net.submit_and_order(proposal, endorsements))
        net.flush()
        for tx_id in tx_ids:
            if not net.result_of(tx_id).valid:
                raise LedgerError(f"position transaction {tx_id} invalidated at epoch {epoch}")

        result = net.invoke(
            "role_allocation",
            "allocate",
            {
                "epoch": epoch,
                "k": self.config.effective_k,
                "always_active": list(self.config.always_active),
                "nodes": sorted(positions),
            },
            self.client_org,
        )
        if not result.valid:
            raise LedgerError(f"allocation transaction invalidated at epoch {epoch}")
        payload = result.response
        return RoleAssignment(
            epoch=payload["epoch"],
            active=tuple(payload["active"]),
            passive=tuple(payload["passive"]),
            cost=payload["cost_um2"] / 1_000_000,
        )


def _load_config(path, seed_override) -> SimConfig:
    config = SimConfig.from_json(path)
    if seed_override is not None:
        config = SimConfig.from_dict({**config.to_dict(), "seed": seed_override})
    return config


def _write_run_outputs(out_dir, result, mode: str):
    os.makedirs(out_dir, exist_ok=True)
    epochs_path = os.path.join(out_dir, "epochs.csv")
    with open(epochs_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,node,truth_x,truth_y,truth_z,est_x,est_y,est_z,role_truth,role_est,err_m\n")
        for record in result.records:
            for nid in sorted(record.truth):
                t = record.truth[nid]
                e = record.estimates[nid]
                fh.write(
                    f"{record.epoch},{nid},"
                    f"{t[0]:.6f},{t[1]:.6f},{t[2]:.6f},"
                    f"{e[0]:.6f},{e[1]:.6f},{e[2]:.6f},"
                    f"{record.assignment_truth.role_of(nid)},"
                    f"{record.assignment_est.role_of(nid)},"
                    f"{record.errors[nid]:.6f}\n"
                )

    summary = dict(result.summary)
    summary["config"] = result.config.to_dict()
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # Wall-clock allocation timings are inherently non-reproducible, so they
    # live outside the deterministic artifact set.
    import numpy as np

    seconds = result.alloc_seconds
    with open(os.path.join(out_dir, "timing.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "mode": mode,
                "alloc_calls": len(seconds),
                "mean_s": float(np.mean(seconds)),
                "median_s": float(np.median(seconds)),
                "max_s": float(np.max(seconds)),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


def _cmd_simulate(args) -> int:
    config = _load_config(args.config, args.seed)
    result = run_scenario(config)
    _write_run_outputs(args.out_dir, result, mode="direct")
    print(f"simulated {config.n_epochs} epochs -> {args.out_dir}")
    return 0


def _cmd_simulate_ledger(args) -> int:
    config = _load_config(args.config, args.seed)
    allocator = LedgerAllocator(config)
    result = run_scenario(config, alloc_fn=allocator)
    _write_run_outputs(args.out_dir, result, mode="ledger")
    allocator.network.verify()
    write_ndjson(allocator.network.blocks, os.path.join(args.out_dir, "blocks.ndjson"))
    print(
        f"simulated {config.n_epochs} epochs through the ledger "
        f"({len(allocator.network.blocks)} blocks) -> {args.out_dir}"
    )
    return 0


def _cmd_bench(args) -> int:
    report = run_bench(args.n, args.k, args.iters, args.mode)
    payload = report.to_dict()
    os.makedirs(args.out_dir, exist_ok=True)
    latency_path = os.path.join(args.out_dir, "latency.json")
    existing = []
    if os.path.exists(latency_path):
        with open(latency_path, encoding="utf-8") as fh:
            data = json.load(fh)
            existing = [r for r in (data if isinstance(data, list) else [data]) if r["mode"] != args.mode]
    with open(latency_path, "w", encoding="utf-8") as fh:
        json.dump(existing + [payload], fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{'mode':>8s} {'median':>10s} {'p25':>10s} {'p75':>10s} {'mean':>10s}")
    print(
        f"{payload['mode']:>8s} {payload['median_s'] * 1000:9.3f}ms "
        f"{payload['p25_s'] * 1000:9.3f}ms {payload['p75_s'] * 1000:9.3f}ms "
        f"{payload['mean_s'] * 1000:9.3f}ms"
    )
    return 0


def _cmd_verify(args) -> int:
    try:
        report = audit_export(args.ledger)
    except ChainIntegrityError as exc:
        print(f"ledger verification FAILED: {exc}", file=sys.stderr)
        return 1
    print(f"verified {report.blocks} blocks, {report.transactions} transactions "
          f"({report.valid_transactions} valid), {report.path_points} path records")
    for epoch, active, passive in report.role_history:
        print(f"epoch {epoch}: active {list(active)} passive {list(passive)}")
    return 0


def _cmd_report(args) -> int:
    try:
        lines = generate_report(args.out_dir)
    except FileNotFoundError as exc:
        print(f"report failed: {exc}", file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    print(f"report artifacts written under {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uwbroles",
        description="UWB role-allocation simulation with an optional ledger-mediated decision path",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", required=True, help="output directory")
        p.set_defaults(func=func)

    add_run("simulate", _cmd_simulate, "run a scenario with direct allocation")
    add_run("simulate-ledger", _cmd_simulate_ledger, "run a scenario, allocation through the ledger")

    p = sub.add_parser("bench", help="allocation latency benchmark")
    p.add_argument("--n", type=int, default=8, help="node count")
    p.add_argument("--k", type=int, default=4, help="active-set size")
    p.add_argument("--iters", type=int, default=50, help="paced invocations to time")
    p.add_argument("--mode", choices=("direct", "ledger"), default="direct")
    p.add_argument("--out-dir", default=".", help="where latency.json goes")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("verify", help="verify and replay an exported chain")
    p.add_argument("ledger", help="blocks.ndjson path")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("report", help="tables and figures from a finished run")
    p.add_argument("out_dir", help="directory holding epochs.csv and summary.json")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return 2
    except (LedgerError, ChainIntegrityError, RuntimeError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

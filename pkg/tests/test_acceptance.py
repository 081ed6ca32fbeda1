"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a PASS/FAIL line that is repeated in the terminal summary.
"""

from __future__ import annotations

import json
import random
import time
from pathlib import Path

from idpass import data_path
from idpass.classify import TransferCategory, api_surface, classify_api
from idpass.cli import EXIT_JSON_DIVERGED, main
from idpass.isolation import apply_relocations, disconnected_subgraphs, isolate, relocation_candidates
from idpass.plan import generate_plan
from idpass.protocols import PAYLOAD_UNITS_PER_NODE, compare_protocols, exercise_scenario, static_write_scenario
from idpass.randomgen import random_case, random_facts
from idpass.simcore import heap_fingerprint, run_monolith
from idpass.protocols import run_id_protocol

from conftest import FACT_FIXTURES, LOSS_CASES, fixture_facts, record_criterion
from oracles import member_multiset, naive_components, networkx_components, random_intraclass_graph


def _read(path: Path) -> dict:
    return json.loads(path.read_text())


def test_memory_formula(tmp_path):
    start = time.perf_counter()
    code = main(["--out", str(tmp_path), "bench", "chain", "--max-depth", "16"])
    elapsed = time.perf_counter() - start
    rows = _read(tmp_path / "bench-chain.json")["rows"]
    bad = [r for r in rows if r["json_resident"] != r["depth"] * (r["depth"] + 1) // 2 or r["id_resident"] != r["depth"]]
    ok = code == 0 and [r["depth"] for r in rows] == list(range(1, 17)) and not bad and elapsed < 1.0
    record_criterion("memory formula", ok,
                     f"n=1..16 JSON=n(n+1)/2, ID=n, mismatches={len(bad)}, runtime={elapsed:.3f}s")
    assert ok


def test_payload_complexity(tmp_path):
    start = time.perf_counter()
    code = main(["--out", str(tmp_path), "bench", "payload", "--sizes", "10,100,1000"])
    elapsed = time.perf_counter() - start
    rows = _read(tmp_path / "bench-payload.json")["rows"]
    residuals = [r["json_units"] - PAYLOAD_UNITS_PER_NODE * r["size"] for r in rows]
    ids = [r["id_units"] for r in rows]
    ok = code == 0 and [r["size"] for r in rows] == [10, 100, 1000] and set(residuals) == {0} \
        and set(ids) == {1} and elapsed < 1.0
    record_criterion("payload complexity", ok,
                     f"JSON={[r['json_units'] for r in rows]} (slope {PAYLOAD_UNITS_PER_NODE}, residuals {residuals}), "
                     f"ID={ids}, runtime={elapsed:.3f}s")
    assert ok


def test_loss_mode_suite(tmp_path):
    results = []
    for stem, category in sorted(LOSS_CASES.items()):
        out = tmp_path / stem
        code = main(["--out", str(out), "compare", data_path(f"{stem}.facts.json"),
                     data_path(f"{stem}.scenario.json"), "--strict"])
        report = _read(out / "divergence.json")
        cats = sorted({f["category"] for f in report["findings"]["json"]})
        ok = code == EXIT_JSON_DIVERGED and cats == [category] and report["fingerprint_match"]["id"] is True
        results.append((stem, ok, code, cats))
    passed = sum(ok for _, ok, _, _ in results)
    detail = "; ".join(f"{s}: exit {c} {cats}" for s, _, c, cats in results)
    record_criterion("loss-mode suite", passed == len(LOSS_CASES), f"{passed}/{len(LOSS_CASES)} ({detail})")
    assert passed == len(LOSS_CASES)


def test_id_fidelity_fuzz():
    mismatches = []
    for seed in range(500):
        facts, scenario = random_case(seed)
        state, _, _ = run_id_protocol(facts, scenario)
        if heap_fingerprint(state) != heap_fingerprint(run_monolith(facts, scenario)):
            mismatches.append(seed)
    clusters = {len(random_case(s)[0].clusters) for s in range(50)}
    ok = not mismatches
    record_criterion("ID fidelity fuzz", ok,
                     f"{500 - len(mismatches)}/500 seeds match the monolith (cluster counts seen {sorted(clusters)}), "
                     f"mismatching seeds {mismatches[:10]}")
    assert ok


def test_isolation_oracle(tradeconfig):
    rng = random.Random(2024)
    disagreements = 0
    largest = 0
    for _ in range(1000):
        g = random_intraclass_graph(rng, max_nodes=200)
        largest = max(largest, len(g.nodes))
        got = {s.nodes for s in disconnected_subgraphs(g)}
        if not (got == naive_components(g.nodes, g.edges) == networkx_components(g.nodes, g.edges)):
            disagreements += 1
    verdicts = [d.verdict() for d in relocation_candidates(tradeconfig) if d.subgraph.class_name == "TradeConfig"]
    outcome = verdicts == ["Keep(MultiClusterAccess)", "Relocate(k2)"]
    ok = disagreements == 0 and outcome
    record_criterion("isolation oracle", ok,
                     f"1000 random graphs (<= {largest} nodes), {disagreements} disagreements; "
                     f"tradeconfig-mini TradeConfig verdicts {verdicts}")
    assert ok


def test_conservation():
    broken = []
    for name in FACT_FIXTURES:
        facts = fixture_facts(name)
        if member_multiset(apply_relocations(facts, relocation_candidates(facts))) != member_multiset(facts):
            broken.append(name)
        if member_multiset(isolate(facts, "fixpoint")[0]) != member_multiset(facts):
            broken.append(f"{name} (fixpoint)")
    for seed in range(200):
        facts = random_facts(random.Random(seed))
        if member_multiset(isolate(facts, "fixpoint")[0]) != member_multiset(facts):
            broken.append(f"random seed {seed}")
    ok = not broken
    record_criterion("conservation", ok,
                     f"{len(FACT_FIXTURES)} fixtures + 200 random facts, violations {broken[:5]}")
    assert ok


def _soundness(facts) -> tuple[int, int, list]:
    passes = statics = 0
    failures = []
    for api in api_surface(facts):
        _, primary = classify_api(facts, api)
        if primary is TransferCategory.PASS_JSON:
            passes += 1
            cats = compare_protocols(facts, exercise_scenario(facts, api)).categories("json")
            if cats:
                failures.append((api.api_id, cats))
        elif primary is TransferCategory.STATIC:
            statics += 1
            probe_facts, scenario = static_write_scenario(facts, api)
            if "StaticLoss" not in compare_protocols(probe_facts, scenario).categories("json"):
                failures.append((api.api_id, "no StaticLoss"))
    return passes, statics, failures


def test_classifier_soundness():
    passes = statics = 0
    failures = []
    corpora = [fixture_facts(n) for n in FACT_FIXTURES] + [random_facts(random.Random(s)) for s in range(200)]
    for facts in corpora:
        p, s, f = _soundness(facts)
        passes, statics, failures = passes + p, statics + s, failures + f
    ok = not failures
    record_criterion("classifier soundness", ok,
                     f"{passes} PassJson APIs with zero findings, {statics} Static APIs with StaticLoss, "
                     f"over fixtures + 200 random facts; failures {failures[:5]}")
    assert ok


def test_plan_coverage(pbw):
    uncovered = []
    for name in FACT_FIXTURES:
        facts = fixture_facts(name)
        if len(generate_plan(facts).server_endpoints()) != len(api_surface(facts)):
            uncovered.append(name)
    plan = generate_plan(pbw)
    routes = plan.routes()
    renamed = any(r["from"] == "CatalogMgr" and r["to"] == "CatalogMgrServer" for r in plan.renames)
    ok = not uncovered and "/catalogmgr/create" in routes and "/catalogmgr/addItem" in routes and renamed
    record_criterion("plan coverage", ok,
                     f"endpoints == api_surface on {len(FACT_FIXTURES) - len(uncovered)}/{len(FACT_FIXTURES)} fixtures; "
                     f"pbw-mini routes {routes}, CatalogMgr->CatalogMgrServer renamed={renamed}")
    assert ok


DETERMINISM_COMMANDS = [
    ["ingest", data_path("tradeconfig-mini.json")],
    ["isolate", data_path("chained-isolation.json"), "--iterations", "fixpoint"],
    ["isolate", data_path("net-increase.json"), "--policy", "net-reduction"],
    ["classify", data_path("mixed-classes.json")],
    ["plan", data_path("pbw-mini.json"), "--lint"],
    ["simulate", data_path("loss-alias.facts.json"), data_path("loss-alias.scenario.json"), "--protocol", "id"],
    ["simulate", data_path("loss-alias.facts.json"), data_path("loss-alias.scenario.json"), "--protocol", "json"],
    ["compare", data_path("pbw-mini.json"), data_path("pbw-mini.scenario.json")],
    ["compare", "--random", "25"],
    ["bench", "chain", "--max-depth", "16"],
    ["bench", "payload", "--sizes", "10,100,1000"],
]


def test_determinism(tmp_path):
    differing = []
    files = 0
    for i, cmd in enumerate(DETERMINISM_COMMANDS):
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / f"{i}{run}"
            main(["--out", str(out), "--seed", "7", *cmd])
            outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        files += len(outputs[0])
        if outputs[0] != outputs[1] or not outputs[0]:
            differing.append(cmd[0])
    ok = not differing
    record_criterion("determinism", ok,
                     f"{len(DETERMINISM_COMMANDS)} commands run twice, {files} files compared, differing {differing}")
    assert ok

from __future__ import annotations

import json

import pytest

from idpass import data_path
from idpass.facts import load_facts
from idpass.simcore import load_scenario

FACT_FIXTURES = [
    "pbw-mini.json",
    "tradeconfig-mini.json",
    "chained-isolation.json",
    "net-increase.json",
    "two-clients.json",
    "dispatch-z.json",
    "mixed-classes.json",
    "accessor-heavy.json",
    "loss-stale-field.facts.json",
    "loss-alias.facts.json",
    "loss-this.facts.json",
    "loss-stale-frame.facts.json",
    "loss-constructor.facts.json",
]

LOSS_CASES = {
    "loss-stale-field": "ReferenceRebindLoss",
    "loss-alias": "AliasLoss",
    "loss-this": "ThisNotUpdated",
    "loss-stale-frame": "ReferenceRebindLoss",
    "loss-constructor": "ConstructorSideEffect",
}


def fixture_facts(name: str):
    return load_facts(data_path(name))


def loss_case(stem: str):
    facts = load_facts(data_path(f"{stem}.facts.json"))
    return facts, load_scenario(data_path(f"{stem}.scenario.json"), facts)


def facts_doc(name: str) -> dict:
    with open(data_path(name), encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture
def pbw():
    return fixture_facts("pbw-mini.json")


@pytest.fixture
def tradeconfig():
    return fixture_facts("tradeconfig-mini.json")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

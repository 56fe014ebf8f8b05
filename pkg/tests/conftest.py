"""Shared solved-scenario bundles.

Solving a scenario's skeletons is the expensive part of most tests, so
each scenario is solved once per session and the (scenario, solutions,
components) triple is shared read-only across test modules.
"""

import numpy as np
import pytest

from slgp import (ScenarioParams, build_component, build_scenario, solve)


class Bundle:
    def __init__(self, scenario, solutions, components):
        self.scenario = scenario
        self.solutions = solutions
        self.components = components

    def solution(self, skeleton_id):
        return self.solutions[skeleton_id]

    def component(self, skeleton_id):
        return self.components[skeleton_id]


def _solve_all(params):
    scenario = build_scenario(params)
    solutions, components = {}, {}
    for sk in scenario.skeletons:
        sol = solve(scenario.problem, sk)
        solutions[sk.id] = sol
        components[sk.id] = (build_component(scenario.problem, sk, sol)
                             if sol.converged else None)
    return Bundle(scenario, solutions, components)


@pytest.fixture(scope="session")
def elbow():
    return _solve_all(ScenarioParams(name="elbow"))


@pytest.fixture(scope="session")
def push():
    return _solve_all(ScenarioParams(name="push"))


@pytest.fixture(scope="session")
def tworoute():
    return _solve_all(ScenarioParams(name="tworoute"))

"""Symbolic situation estimation over Petri-net plan prototypes."""

from .dsl import ParseFailed, load_library, parse_library, parse_scenario, parse_script, serialize, serialize_scenario
from .estimator import EstimatorConfig, PlanInstance, Situation, StepTrace, predict, project, innovate, revise, run, step
from .plan import PlanLibrary, PlanPrototype, ActivityPrototype, validate
from .scenario import ObservabilityMask, Scenario, ScenarioStep
from .sim import simulate
from .symbolic import Atom, Const, Constraint, Cube, Num, Substitution, Var, anti_unify, match_ground, reduce

__version__ = "0.1.0"

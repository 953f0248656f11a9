"""Simulate snapshot-isolation transaction protocols and check their histories."""

from .axioms import Axiom, CheckReport, Model, Violation, brute_force_satisfies, check_model
from .checker import check_deployment, extract, mutate
from .model import TOOL_VERSION, History, Transaction, Ts, load_history, save_history
from .sim import SimConfig, interleave_directed, run

__version__ = TOOL_VERSION

__all__ = [
    "Axiom", "CheckReport", "History", "Model", "SimConfig", "Transaction", "Ts", "Violation",
    "brute_force_satisfies", "check_deployment", "check_model", "extract", "interleave_directed",
    "load_history", "mutate", "run", "save_history",
]

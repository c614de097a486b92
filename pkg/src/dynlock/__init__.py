"""Simulator and verification harness for randomized local mutual exclusion
on dynamic anonymous networks."""

from .core import Message, MsgKind, NodeVars, Phase, State
from .network import Network, build_network
from .scheduler import Simulation

__all__ = ["Message", "MsgKind", "Network", "NodeVars", "Phase", "Simulation", "State", "build_network"]
__version__ = "0.1.0"

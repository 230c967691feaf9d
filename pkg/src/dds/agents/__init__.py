"""Stateless agent pipeline: clerk, transformer, carrier sub-agents,
receiver/trigger, conductor, coordinator."""

from dds.agents.base import AgentRole, BaseAgent, PICKUP_THRESHOLD
from dds.agents.carrier import CarrierAgent
from dds.agents.clerk import ClerkAgent, plan_request
from dds.agents.conductor import ConductorAgent
from dds.agents.coordinator import CoordinatorAgent
from dds.agents.receiver import ReceiverAgent
from dds.agents.transformer import TransformerAgent
from dds.agents.service import AGENT_CLASSES, DEFAULT_ROLES, build_agents, run_agent_loop

__all__ = [
    "AgentRole", "BaseAgent", "PICKUP_THRESHOLD", "ClerkAgent", "TransformerAgent",
    "CarrierAgent", "ReceiverAgent", "ConductorAgent", "CoordinatorAgent",
    "plan_request", "build_agents", "run_agent_loop", "AGENT_CLASSES", "DEFAULT_ROLES",
]

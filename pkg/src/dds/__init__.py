"""Desk-scale distributed workflow orchestration engine.

Workflows are graphs of Work units with Conditions and Parameters, executed
by a pipeline of stateless agents coordinating through a persistence layer
(claim/lease) and a pluggable event bus, with jobs dispatched to pluggable
workload backends and everything exposed through a REST service and CLI.
"""

__version__ = "0.1.0"

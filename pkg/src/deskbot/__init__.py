"""Desktop arm stack: kinematics, simulated perception, intent parsing,
a task state machine, a control hub, and an evaluation harness."""

__version__ = "0.1.0"

"""Desk-scale tabletop manipulation harness.

A deterministic kinematic simulator, an axis-based spatial geometry core, a
multi-round conversation protocol for next-goal gripper-pose prediction, a
guided data-collection service, and a GRPO rollout/advantage harness, with
any chat-completions-compatible multimodal model (or a scripted oracle) as
the pluggable policy.
"""

__version__ = "0.1.0"

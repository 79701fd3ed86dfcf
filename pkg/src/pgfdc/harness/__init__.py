"""CLI, evaluation protocols and report figures."""

from .evaluation import EvalReport, evaluate_discriminator_score, evaluate_policy, run_episodes

__all__ = ["EvalReport", "evaluate_discriminator_score", "evaluate_policy", "run_episodes"]

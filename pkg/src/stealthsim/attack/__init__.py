from .agent import Attacker, attack_signal, stage3_first_signal
from .impact import ImpactProblem, build_Txa, closed_loop_under_attack, detector_trace, solve_worst_case
from .knowledge import STAGES, AttackerKnowledge, AttackTimeline
from .stage1 import ControllerEstimate, default_mode, joint_system, stage1_feasible, stage1_step
from .stage2 import (DetectorEstimate, NominalOutputSampler, output_budget, sphere_maximizer,
                     stage2_accuracy, stage2_length, stage2_step)

__all__ = [
    "Attacker", "attack_signal", "stage3_first_signal", "ImpactProblem", "build_Txa",
    "closed_loop_under_attack", "detector_trace", "solve_worst_case", "STAGES",
    "AttackerKnowledge", "AttackTimeline", "ControllerEstimate", "default_mode", "joint_system",
    "stage1_feasible", "stage1_step", "DetectorEstimate", "NominalOutputSampler", "output_budget",
    "sphere_maximizer", "stage2_accuracy", "stage2_length", "stage2_step",
]

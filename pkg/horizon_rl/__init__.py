"""与时间跨度无关的回合式强化学习：表格MDP、精确神谕、采样流程与引理验证"""
from horizon_rl.exact_oracle import finite_horizon_value, optimal_nonstationary
from horizon_rl.instances import resolve_mdp
from horizon_rl.mdp_core import FiniteMdp, MarkovChain, Policy, TrajectoryDataset
from horizon_rl.planner import run_generative_pipeline, run_pessimistic_pipeline
from horizon_rl.sim_env import EpisodicEnv, GenerativeSampler, RngStream

__version__ = "0.1.0"

__all__ = [
    "EpisodicEnv",
    "FiniteMdp",
    "GenerativeSampler",
    "MarkovChain",
    "Policy",
    "RngStream",
    "TrajectoryDataset",
    "finite_horizon_value",
    "optimal_nonstationary",
    "resolve_mdp",
    "run_generative_pipeline",
    "run_pessimistic_pipeline",
]

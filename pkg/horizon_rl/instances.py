"""
命名的MDP生成器

    twostate-exit(H)            停留每步得 1/H，离开得 1 后进入吸收态
    random-dense(S, A, seed[, H]) Dirichlet 转移行，奖励取值 {0, 1/H}
    chain(S[, H])               动作0停留，动作1前进一格，最后一格每步得 1/H
    coinflip([H])               两状态单动作，每步等概率跳转，状态1得 1/H

resolve_mdp 接受 "name(args)" 或 MDP 文件路径。
"""
from __future__ import annotations

import os
import re
from typing import Callable, Dict, List, Optional

import numpy as np

from horizon_rl.errors import ConfigError
from horizon_rl.mdp_core import FiniteMdp, MarkovChain
from horizon_rl.mdp_io import load_mdp
from horizon_rl.sim_env import RngStream

DEFAULT_HORIZON = 8


def twostate_exit(horizon: int = DEFAULT_HORIZON) -> FiniteMdp:
    """最优非平稳策略价值 2 - 1/H，任何确定性平稳策略价值不超过 1"""
    transition = np.zeros((2, 2, 2))
    transition[0, 0, 0] = 1.0
    transition[0, 1, 1] = 1.0
    transition[1, :, 1] = 1.0
    reward = np.array([[1.0 / horizon, 1.0], [0.0, 0.0]])
    return FiniteMdp.with_point_rewards(transition, reward, [1.0, 0.0], horizon)


def chain(n_states: int, horizon: int = DEFAULT_HORIZON) -> FiniteMdp:
    if n_states < 1:
        raise ConfigError("chain 至少需要一个状态")
    transition = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        transition[s, 0, s] = 1.0
        transition[s, 1, min(s + 1, n_states - 1)] = 1.0
    reward = np.zeros((n_states, 2))
    reward[n_states - 1, :] = 1.0 / horizon
    initial = np.zeros(n_states)
    initial[0] = 1.0
    return FiniteMdp.with_point_rewards(transition, reward, initial, horizon)


def coinflip(horizon: int = DEFAULT_HORIZON) -> FiniteMdp:
    transition = np.full((2, 1, 2), 0.5)
    reward = np.array([[0.0], [1.0 / horizon]])
    return FiniteMdp.with_point_rewards(transition, reward, [0.5, 0.5], horizon)


def random_dense(
    n_states: int, n_actions: int, seed: int, horizon: int = DEFAULT_HORIZON
) -> FiniteMdp:
    """满足总奖励有界假设的随机MDP：每步奖励不超过 1/H"""
    rng = RngStream(seed, (n_states, n_actions)).generator
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    hit = rng.random((n_states, n_actions))
    shape = (n_states, n_actions)
    values = np.stack([np.zeros(shape), np.full(shape, 1.0 / horizon)], axis=2)
    probs = np.stack([1.0 - hit, hit], axis=2)
    return FiniteMdp(
        _renormalize(transition), values, probs, _renormalize(initial), horizon
    )


def _renormalize(probs: np.ndarray) -> np.ndarray:
    return probs / probs.sum(axis=-1, keepdims=True)


def random_mdp(
    n_states: int,
    n_actions: int,
    horizon: int,
    rng: RngStream,
    sparsity: float = 0.0,
    reward_cap: Optional[float] = None,
) -> FiniteMdp:
    """检验用随机MDP

    sparsity 为每个转移项被置零的概率（每行至少保留一个正项），
    奖励为 [0, reward_cap] 上的确定值，reward_cap 缺省为 1/H。
    """
    gen = rng.generator
    transition = gen.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        mask = gen.random(transition.shape) >= sparsity
        keep = np.argmax(transition, axis=-1)
        np.put_along_axis(mask, keep[..., None], True, axis=-1)
        transition = transition * mask
    initial = gen.dirichlet(np.ones(n_states))
    cap = 1.0 / horizon if reward_cap is None else reward_cap
    reward = gen.random((n_states, n_actions)) * cap
    return FiniteMdp.with_point_rewards(
        _renormalize(transition), reward, _renormalize(initial), horizon
    )


def random_chain(n_states: int, rng: RngStream, sparsity: float = 0.0) -> MarkovChain:
    gen = rng.generator
    transition = gen.dirichlet(np.ones(n_states), size=n_states)
    if sparsity > 0:
        mask = gen.random(transition.shape) >= sparsity
        np.put_along_axis(mask, np.argmax(transition, axis=-1)[:, None], True, axis=-1)
        transition = transition * mask
    initial = gen.dirichlet(np.ones(n_states))
    return MarkovChain(_renormalize(transition), _renormalize(initial))


GENERATORS: Dict[str, Callable[..., FiniteMdp]] = {
    "twostate-exit": twostate_exit,
    "random-dense": random_dense,
    "chain": chain,
    "coinflip": coinflip,
}

_CALL = re.compile(r"^\s*([a-z][a-z0-9-]*)\s*(?:\((.*)\))?\s*$")


def _parse_args(text: Optional[str]) -> List[int]:
    if text is None or not text.strip():
        return []
    try:
        return [int(token) for token in text.split(",")]
    except ValueError:
        raise ConfigError(f"生成器参数必须是整数: {text}")


def resolve_mdp(source: str, horizon: Optional[int] = None) -> FiniteMdp:
    """按名字或文件路径得到MDP，给出 horizon 时覆盖原有的 H"""
    if os.path.exists(source):
        mdp = load_mdp(source)
    else:
        match = _CALL.match(source)
        if match is None or match.group(1) not in GENERATORS:
            raise ConfigError(f"未知的MDP来源: {source}，可用生成器 {sorted(GENERATORS)}")
        name, args = match.group(1), _parse_args(match.group(2))
        generator = GENERATORS[name]
        try:
            if horizon is not None:
                mdp = generator(*args, horizon=horizon)
            else:
                mdp = generator(*args)
        except TypeError as e:
            raise ConfigError(f"生成器 {name} 参数错误: {e}")
    if horizon is not None and mdp.horizon != horizon:
        mdp = mdp.with_horizon(horizon)
    return mdp

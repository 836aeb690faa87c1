"""
文本格式读写

MDP 文件格式（'#' 之后为注释，空行忽略）::

    [dims]
    states=2 actions=2 horizon=4
    [initial]
    1.0 0.0
    [transition 0 0]
    1.0 0.0
    [reward 0 0]
    0.25 1.0          # 每行一个 "支撑点 概率"

* [dims] 必须出现且只出现一次，三个键都必须给出；
* [initial] 与 [transition s a] 的概率可以写在一行或多行，个数必须等于状态数；
* 缺少 [reward s a] 时该对的奖励为 0 的点分布。

策略文件::

    [policy]
    * 0 -> 1          # 平稳策略：状态0取动作1
    3 1 -> 0          # 非平稳策略：第3步状态1取动作0

模型文件在 MDP 格式基础上增加 [model] provenance=...、[mean_reward s a]、
[count s a]、[width s a]、[reward_width s a] 与 [initial_width] 段，
保存 EstimatedModel 或 IntervalModelSet 以便离线规划。

采样数据集保存为 .npz：header 为 JSON 字符串
{"states", "actions", "horizon", "lists", "seed", "scale"}，
其余四个 (N, L) 数组按列存放 s、a、r、s'。
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from horizon_rl.empirical_model import EstimatedModel, IntervalModelSet
from horizon_rl.errors import DimensionMismatchError, ParseError
from horizon_rl.mdp_core import FiniteMdp, Policy, TrajectoryDataset


@dataclass
class _Section:
    name: str
    args: List[str]
    line_no: int
    rows: List[Tuple[int, List[str]]] = field(default_factory=list)

    def tokens(self) -> List[Tuple[int, str]]:
        return [(line_no, token) for line_no, row in self.rows for token in row]


def _read_sections(lines: Iterable[str]) -> List[_Section]:
    sections: List[_Section] = []
    for line_no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("段头缺少 ']'", line_no)
            tokens = line[1:-1].split()
            if not tokens:
                raise ParseError("空段头", line_no)
            sections.append(_Section(tokens[0].lower(), tokens[1:], line_no))
        else:
            if not sections:
                raise ParseError("数据行出现在任何段之前", line_no)
            sections[-1].rows.append((line_no, line.split()))
    return sections


def _read_file(path: str) -> List[_Section]:
    with open(path, "r", encoding="utf-8") as f:
        return _read_sections(f)


def _float(token: str, line_no: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"无法解析数值 '{token}'", line_no) from None


def _int(token: str, line_no: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"无法解析整数 '{token}'", line_no) from None


def _floats(section: _Section, count: int) -> np.ndarray:
    tokens = section.tokens()
    if len(tokens) != count:
        message = f"[{section.name}] 需要 {count} 个数值，实际 {len(tokens)} 个"
        raise ParseError(message, section.line_no)
    return np.array([_float(token, line_no) for line_no, token in tokens])


def _pair_args(section: _Section, n_states: int, n_actions: int) -> Tuple[int, int]:
    if len(section.args) != 2:
        raise ParseError(f"[{section.name}] 段头需要 's a' 两个参数", section.line_no)
    s, a = (_int(x, section.line_no) for x in section.args)
    if not (0 <= s < n_states and 0 <= a < n_actions):
        raise ParseError(f"[{section.name} {s} {a}] 状态或动作编号越界", section.line_no)
    return s, a


def _dims(sections: List[_Section]) -> Tuple[int, int, int]:
    dims = [x for x in sections if x.name == "dims"]
    if len(dims) != 1:
        line_no = dims[1].line_no if len(dims) > 1 else None
        raise ParseError("[dims] 必须出现且只出现一次", line_no)
    values: Dict[str, int] = {}
    for line_no, token in dims[0].tokens():
        if "=" not in token:
            raise ParseError(f"[dims] 条目应为 key=value，实际 '{token}'", line_no)
        key, value = token.split("=", 1)
        if key not in ("states", "actions", "horizon"):
            raise ParseError(f"[dims] 未知键 '{key}'", line_no)
        values[key] = _int(value, line_no)
        if values[key] < 1:
            raise ParseError(f"[dims] {key} 必须为正整数", line_no)
    for key in ("states", "actions", "horizon"):
        if key not in values:
            raise ParseError(f"[dims] 缺少 {key}", dims[0].line_no)
    return values["states"], values["actions"], values["horizon"]


def _unique_pairs(
    sections: List[_Section], name: str, n_states: int, n_actions: int, required: bool
) -> Dict[Tuple[int, int], _Section]:
    found: Dict[Tuple[int, int], _Section] = {}
    for section in sections:
        if section.name != name:
            continue
        pair = _pair_args(section, n_states, n_actions)
        if pair in found:
            raise ParseError(f"[{name} {pair[0]} {pair[1]}] 重复出现", section.line_no)
        found[pair] = section
    if required:
        for s in range(n_states):
            for a in range(n_actions):
                if (s, a) not in found:
                    raise ParseError(f"缺少 [{name} {s} {a}] 段")
    return found


def _single(
    sections: List[_Section], name: str, required: bool = True
) -> Optional[_Section]:
    matches = [x for x in sections if x.name == name]
    if len(matches) > 1:
        raise ParseError(f"[{name}] 重复出现", matches[1].line_no)
    if not matches:
        if required:
            raise ParseError(f"缺少 [{name}] 段")
        return None
    return matches[0]


def _check_known(sections: List[_Section], known: Tuple[str, ...]) -> None:
    for section in sections:
        if section.name not in known:
            raise ParseError(f"未知段 [{section.name}]", section.line_no)


def parse_mdp(lines: Iterable[str]) -> FiniteMdp:
    sections = _read_sections(lines)
    _check_known(sections, ("dims", "initial", "transition", "reward"))
    n_states, n_actions, horizon = _dims(sections)

    initial = _floats(_single(sections, "initial"), n_states)
    transition = np.zeros((n_states, n_actions, n_states))
    transition_by_pair = _unique_pairs(
        sections, "transition", n_states, n_actions, True
    )
    for (s, a), section in transition_by_pair.items():
        transition[s, a] = _floats(section, n_states)

    rewards: List[List[List[Tuple[float, float]]]] = [
        [[(0.0, 1.0)] for _ in range(n_actions)] for _ in range(n_states)
    ]
    reward_by_pair = _unique_pairs(sections, "reward", n_states, n_actions, False)
    for (s, a), section in reward_by_pair.items():
        pairs = []
        for line_no, row in section.rows:
            if len(row) != 2:
                raise ParseError("奖励行格式应为 '支撑点 概率'", line_no)
            pairs.append((_float(row[0], line_no), _float(row[1], line_no)))
        if not pairs:
            raise ParseError(f"[reward {s} {a}] 没有任何支撑点", section.line_no)
        rewards[s][a] = pairs

    return FiniteMdp.from_reward_lists(transition, rewards, initial, horizon)


def load_mdp(path: str) -> FiniteMdp:
    with open(path, "r", encoding="utf-8") as f:
        return parse_mdp(f)


def _fmt(values: Iterable[float]) -> str:
    return " ".join(repr(float(x)) for x in values)


def format_mdp(mdp: FiniteMdp) -> str:
    lines = [
        "[dims]",
        f"states={mdp.n_states} actions={mdp.n_actions} horizon={mdp.horizon}",
        "[initial]",
        _fmt(mdp.initial),
    ]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(f"[transition {s} {a}]")
            lines.append(_fmt(mdp.transition[s, a]))
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(f"[reward {s} {a}]")
            for value, prob in mdp.reward_distribution(s, a):
                lines.append(f"{value!r} {prob!r}")
    return "\n".join(lines) + "\n"


def save_mdp(mdp: FiniteMdp, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_mdp(mdp))


def parse_policy(lines: Iterable[str], n_states: int, n_actions: int) -> Policy:
    sections = _read_sections(lines)
    _check_known(sections, ("policy",))
    section = _single(sections, "policy")

    stationary: Dict[int, int] = {}
    steps: Dict[Tuple[int, int], int] = {}
    for line_no, row in section.rows:
        if len(row) != 4 or row[2] != "->":
            raise ParseError("策略行格式应为 'h s -> a' 或 '* s -> a'", line_no)
        s, a = _int(row[1], line_no), _int(row[3], line_no)
        if not (0 <= s < n_states and 0 <= a < n_actions):
            raise ParseError("策略行中的状态或动作编号越界", line_no)
        if row[0] == "*":
            if s in stationary:
                raise ParseError(f"状态 {s} 重复定义", line_no)
            stationary[s] = a
        else:
            h = _int(row[0], line_no)
            if h < 0 or (h, s) in steps:
                raise ParseError(f"步 {h} 状态 {s} 非法或重复", line_no)
            steps[(h, s)] = a
        if stationary and steps:
            raise ParseError("平稳条目与非平稳条目不能混用", line_no)

    if stationary:
        missing = [s for s in range(n_states) if s not in stationary]
        if missing:
            raise ParseError(f"平稳策略缺少状态 {missing}", section.line_no)
        return Policy.stationary([stationary[s] for s in range(n_states)])

    if not steps:
        raise ParseError("[policy] 为空", section.line_no)
    horizon = max(h for h, _ in steps) + 1
    table = np.zeros((horizon, n_states), dtype=np.int64)
    for h in range(horizon):
        for s in range(n_states):
            if (h, s) not in steps:
                raise ParseError(f"非平稳策略缺少 第{h}步 状态{s}", section.line_no)
            table[h, s] = steps[(h, s)]
    return Policy.nonstationary(table)


def load_policy(path: str, n_states: int, n_actions: int) -> Policy:
    with open(path, "r", encoding="utf-8") as f:
        return parse_policy(f, n_states, n_actions)


def format_policy(policy: Policy) -> str:
    lines = ["[policy]"]
    if policy.is_stationary:
        lines += [f"* {s} -> {a}" for s, a in enumerate(policy.actions.tolist())]
    else:
        for h, row in enumerate(policy.actions.tolist()):
            lines += [f"{h} {s} -> {a}" for s, a in enumerate(row)]
    return "\n".join(lines) + "\n"


def save_policy(policy: Policy, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_policy(policy))


def format_model(
    model: EstimatedModel, widths: Optional[IntervalModelSet] = None
) -> str:
    n_states, n_actions = model.n_states, model.n_actions
    lines = [
        f"[model] provenance={model.provenance}",
        "[dims]",
        f"states={n_states} actions={n_actions} horizon={model.horizon}",
        "[initial]",
        _fmt(model.initial),
    ]
    if widths is not None:
        lines += ["[initial_width]", _fmt(widths.initial_width)]
    for s in range(n_states):
        for a in range(n_actions):
            lines += [f"[transition {s} {a}]", _fmt(model.transition[s, a])]
            lines += [f"[mean_reward {s} {a}]", repr(float(model.reward[s, a]))]
            if model.counts is not None:
                lines += [f"[count {s} {a}]", str(int(model.counts[s, a]))]
            if widths is not None:
                lines += [f"[width {s} {a}]", _fmt(widths.transition_width[s, a])]
                reward_width = repr(float(widths.reward_width[s, a]))
                lines += [f"[reward_width {s} {a}]", reward_width]
    return "\n".join(lines) + "\n"


def save_model(model: EstimatedModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_model(model))


def save_interval_set(model_set: IntervalModelSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_model(model_set.center, model_set))


_MODEL_SECTIONS = (
    "model", "dims", "initial", "initial_width", "transition",
    "mean_reward", "count", "width", "reward_width",
)


def _parse_model_sections(
    sections: List[_Section],
) -> Tuple[EstimatedModel, List[_Section]]:
    _check_known(sections, _MODEL_SECTIONS)
    header = _single(sections, "model")
    provenance = None
    for arg in header.args:
        if arg.startswith("provenance="):
            provenance = arg.split("=", 1)[1]
    if provenance is None:
        raise ParseError("[model] 缺少 provenance", header.line_no)

    n_states, n_actions, horizon = _dims(sections)
    initial = _floats(_single(sections, "initial"), n_states)
    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))
    transition_by_pair = _unique_pairs(
        sections, "transition", n_states, n_actions, True
    )
    for (s, a), section in transition_by_pair.items():
        transition[s, a] = _floats(section, n_states)
    mean_reward_by_pair = _unique_pairs(
        sections, "mean_reward", n_states, n_actions, True
    )
    for (s, a), section in mean_reward_by_pair.items():
        reward[s, a] = _floats(section, 1)[0]

    count_sections = _unique_pairs(sections, "count", n_states, n_actions, False)
    counts = None
    if count_sections:
        counts = np.zeros((n_states, n_actions), dtype=np.int64)
        count_by_pair = _unique_pairs(sections, "count", n_states, n_actions, True)
        for (s, a), section in count_by_pair.items():
            tokens = section.tokens()
            if len(tokens) != 1:
                raise ParseError("[count] 需要一个整数", section.line_no)
            counts[s, a] = _int(tokens[0][1], tokens[0][0])

    model = EstimatedModel(transition, reward, initial, counts, horizon, provenance)
    return model, sections


def parse_interval_set(lines: Iterable[str]) -> IntervalModelSet:
    model, sections = _parse_model_sections(_read_sections(lines))
    n_states, n_actions = model.n_states, model.n_actions
    initial_width = _floats(_single(sections, "initial_width"), n_states)
    transition_width = np.zeros((n_states, n_actions, n_states))
    reward_width = np.zeros((n_states, n_actions))
    width_by_pair = _unique_pairs(sections, "width", n_states, n_actions, True)
    for (s, a), section in width_by_pair.items():
        transition_width[s, a] = _floats(section, n_states)
    reward_width_by_pair = _unique_pairs(
        sections, "reward_width", n_states, n_actions, False
    )
    for (s, a), section in reward_width_by_pair.items():
        reward_width[s, a] = _floats(section, 1)[0]
    return IntervalModelSet(model, transition_width, initial_width, reward_width)


def load_interval_set(path: str) -> IntervalModelSet:
    with open(path, "r", encoding="utf-8") as f:
        return parse_interval_set(f)


def load_model(path: str) -> EstimatedModel:
    model, _ = _parse_model_sections(_read_file(path))
    return model


def save_dataset(dataset: TrajectoryDataset, path: str) -> None:
    header = {
        "states": dataset.n_states,
        "actions": dataset.n_actions,
        "horizon": dataset.horizon,
        "lists": dataset.n_lists,
        "seed": dataset.seed,
        "scale": dataset.scale,
    }
    with open(path, "wb") as f:
        np.savez_compressed(
            f,
            header=np.array(json.dumps(header, sort_keys=True)),
            states=dataset.states,
            actions=dataset.actions,
            rewards=dataset.rewards,
            next_states=dataset.next_states,
        )


def load_dataset(path: str) -> TrajectoryDataset:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        dataset = TrajectoryDataset(
            data["states"],
            data["actions"],
            data["rewards"],
            data["next_states"],
            header["states"],
            header["actions"],
            header["horizon"],
            seed=header["seed"],
            scale=header["scale"],
        )
    if dataset.n_lists != header["lists"]:
        raise DimensionMismatchError(
            f"header 记录 {header['lists']} 个列表，实际 {dataset.n_lists}"
        )
    return dataset

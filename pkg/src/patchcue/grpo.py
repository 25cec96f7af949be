"""Group-relative advantages and the clipped GRPO objective.

Evaluates the objective on supplied per-token log-probabilities; nothing here
computes gradients. Each completion's outcome advantage is broadcast to all of
its tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

DEFAULT_EPSILON = 0.1
DEFAULT_BETA = 0.001
DEFAULT_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TokenLogProbs:
    logp_new: float
    logp_old: float
    logp_ref: float


@dataclass
class GrpoGroup:
    rewards: list[float]
    token_logprobs: list[list[TokenLogProbs]]
    group_id: str | None = None

    @property
    def group_size(self) -> int:
        return len(self.rewards)

    def validate(self) -> None:
        if not self.rewards:
            raise ValueError("group has no completions")
        if len(self.token_logprobs) != len(self.rewards):
            raise ValueError(
                f"{len(self.rewards)} rewards but {len(self.token_logprobs)} completions"
            )
        if not all(math.isfinite(r) for r in self.rewards):
            raise ValueError("rewards must be finite")
        for i, tokens in enumerate(self.token_logprobs):
            if not tokens:
                raise ValueError(f"completion {i} has no tokens")
            for t in tokens:
                for lp in (t.logp_new, t.logp_old, t.logp_ref):
                    if not math.isfinite(lp) or lp > 0:
                        raise ValueError(f"completion {i}: log-probability {lp} not finite and <= 0")


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = DEFAULT_EPSILON
    beta: float = DEFAULT_BETA
    std_floor: float = DEFAULT_STD_FLOOR

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.std_floor > 0:
            raise ValueError(f"std_floor must be > 0, got {self.std_floor}")


@dataclass
class GrpoResult:
    advantages: list[float]
    objective: float
    mean_kl: float
    per_completion: list[float] = field(default_factory=list)


def group_advantages(rewards: Sequence[float], std_floor: float = DEFAULT_STD_FLOOR) -> list[float]:
    """(r - mean) / max(population std, std_floor); equal rewards give zeros."""
    if len(rewards) == 0:
        raise ValueError("rewards must be non-empty")
    n = len(rewards)
    mean = math.fsum(rewards) / n
    centered = [r - mean for r in rewards]
    std = math.sqrt(math.fsum(c * c for c in centered) / n)
    if all(r == rewards[0] for r in rewards):
        return [0.0] * n
    scale = max(std, std_floor)
    return [c / scale for c in centered]


def clipped_surrogate(ratio: float, advantage: float, epsilon: float = DEFAULT_EPSILON) -> float:
    if not ratio > 0:
        raise ValueError(f"probability ratio must be positive, got {ratio}")
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return min(ratio * advantage, clipped * advantage)


def kl_estimate(logp_new: float, logp_ref: float) -> float:
    """Per-token KL estimator r - log r - 1 with r = pi_ref / pi_new.

    Written as expm1(d) - d for accuracy near zero; always >= 0.
    """
    d = logp_ref - logp_new
    return max(0.0, math.expm1(d) - d)


def grpo_objective(group: GrpoGroup, cfg: GrpoConfig | None = None) -> GrpoResult:
    cfg = cfg or GrpoConfig()
    group.validate()
    advantages = group_advantages(group.rewards, cfg.std_floor)
    per_completion = []
    kl_means = []
    for adv, tokens in zip(advantages, group.token_logprobs):
        terms = []
        kls = []
        for t in tokens:
            ratio = math.exp(t.logp_new - t.logp_old)
            kl = kl_estimate(t.logp_new, t.logp_ref)
            kls.append(kl)
            terms.append(clipped_surrogate(ratio, adv, cfg.epsilon) - cfg.beta * kl)
        per_completion.append(math.fsum(terms) / len(tokens))
        kl_means.append(math.fsum(kls) / len(tokens))
    objective = math.fsum(per_completion) / len(per_completion)
    return GrpoResult(
        advantages=advantages,
        objective=objective,
        mean_kl=math.fsum(kl_means) / len(kl_means),
        per_completion=per_completion,
    )


def group_from_record(record: dict) -> GrpoGroup:
    """Build a group from the JSONL schema used by the CLI."""
    rewards = [float(r) for r in record["rewards"]]
    tokens = [
        [TokenLogProbs(float(t["logp_new"]), float(t["logp_old"]), float(t["logp_ref"]))
         for t in completion["tokens"]]
        for completion in record["completions"]
    ]
    return GrpoGroup(rewards, tokens, record.get("group_id"))

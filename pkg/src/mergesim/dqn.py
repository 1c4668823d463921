"""Q-learning machinery: replay memory, Boltzmann exploration, TD updates.

The trainer is agnostic about what the action indices mean; the same loop
trains driving policies (indices are driving actions) and the level-selection
policy (indices are reasoning levels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainerConfig
from .errors import ContractViolation
from .nnet import AdamState, NetworkParams, adam_step, forward, td_gradient


@dataclass(frozen=True)
class Experience:
    """One transition; ``action`` indexes the owning network's output."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayMemory:
    """Bounded FIFO ring buffer with uniform with-replacement sampling.

    Storage is array-backed and sized lazily from the first experience, so
    sampling a batch is a single fancy-indexing gather.
    """

    def __init__(self, capacity: int = 50_000, warmup: int = 5_000):
        if warmup > capacity:
            raise ContractViolation("warmup cannot exceed capacity")
        self.capacity = capacity
        self.warmup = warmup
        self._size = 0
        self._head = 0  # next slot to write (oldest once full)
        self._states = None
        self._actions = np.empty(capacity, dtype=np.intp)
        self._rewards = np.empty(capacity, dtype=np.float64)
        self._next_states = None
        self._terminals = np.empty(capacity, dtype=bool)

    def __len__(self) -> int:
        return self._size

    @property
    def ready(self) -> bool:
        return self._size >= self.warmup

    def push(self, exp: Experience) -> None:
        if self._states is None:
            dim = len(exp.state)
            self._states = np.empty((self.capacity, dim), dtype=np.float64)
            self._next_states = np.empty((self.capacity, dim), dtype=np.float64)
        slot = self._head
        self._states[slot] = exp.state
        self._actions[slot] = exp.action
        self._rewards[slot] = exp.reward
        self._next_states[slot] = exp.next_state
        self._terminals[slot] = exp.terminal
        self._head = (self._head + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def oldest(self) -> Experience:
        if self._size == 0:
            raise ContractViolation("memory is empty")
        slot = self._head % self._size if self._size < self.capacity else self._head
        return Experience(self._states[slot].copy(), int(self._actions[slot]),
                          float(self._rewards[slot]), self._next_states[slot].copy(),
                          bool(self._terminals[slot]))

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform batch as stacked arrays (states, actions, rewards, next_states, terminals)."""
        if not self.ready:
            raise ContractViolation(
                f"sampling before warm-up: {self._size} < {self.warmup}")
        idx = rng.integers(0, self._size, size=batch_size)
        return (self._states[idx], self._actions[idx], self._rewards[idx],
                self._next_states[idx], self._terminals[idx])


def boltzmann_probabilities(q: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of q/T with max subtraction; -inf entries get probability zero."""
    if temperature < 1.0:
        raise ContractViolation("temperature must be >= 1")
    q = np.asarray(q, dtype=np.float64)
    scaled = q / temperature
    scaled = scaled - np.max(scaled)
    p = np.exp(scaled)
    return p / p.sum()


def boltzmann_sample(q: np.ndarray, temperature: float, rng: np.random.Generator) -> int:
    """Draw an action index with probability proportional to exp(q/T)."""
    p = boltzmann_probabilities(q, temperature)
    return int(rng.choice(len(p), p=p))


@dataclass
class BoltzmannSchedule:
    """Per-episode multiplicative temperature decay with a floor of 1."""

    temperature: float = 50.0
    decay: float = 0.998
    floor: float = 1.0

    def anneal(self) -> "BoltzmannSchedule":
        self.temperature = max(self.temperature * self.decay, self.floor)
        return self


def td_targets(rewards: np.ndarray, terminals: np.ndarray, next_states: np.ndarray,
               target_params: NetworkParams, discount: float) -> np.ndarray:
    """y = r for terminal transitions, else r + gamma * max_a' Q_target(s', a')."""
    rewards = np.asarray(rewards, dtype=np.float64)
    terminals = np.asarray(terminals, dtype=bool)
    q_next = forward(target_params, np.asarray(next_states, dtype=np.float64))
    bootstrap = discount * q_next.max(axis=1)
    return rewards + np.where(terminals, 0.0, bootstrap)


class DQNTrainer:
    """Owns one Q-network pair plus memory and optimizer.

    ``train_tick`` is called once per environment step after the experience
    push: below warm-up it only counts the tick; otherwise it runs one Adam
    step on a sampled batch. The target network re-syncs every
    ``target_update_every`` ticks, after the update.
    """

    def __init__(self, primary: NetworkParams, cfg: TrainerConfig,
                 sample_rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.primary = primary
        self.target = primary.copy()
        self.adam = AdamState.for_params(primary, learning_rate=cfg.learning_rate,
                                         beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
                                         epsilon=cfg.adam_epsilon)
        self.memory = ReplayMemory(cfg.memory_capacity, cfg.warmup_size)
        self.schedule = BoltzmannSchedule(cfg.initial_temperature, cfg.temperature_decay,
                                          cfg.temperature_floor)
        self.sample_rng = sample_rng
        self.tick = 0

    @property
    def temperature(self) -> float:
        return self.schedule.temperature

    def observe(self, exp: Experience) -> None:
        self.memory.push(exp)

    def train_tick(self) -> None:
        self.tick += 1
        if self.memory.ready:
            states, actions, rewards, next_states, terminals = \
                self.memory.sample(self.cfg.batch_size, self.sample_rng)
            targets = td_targets(rewards, terminals, next_states, self.target,
                                 self.cfg.discount)
            gradient = td_gradient(self.primary, states, actions, targets)
            adam_step(self.primary, self.adam, gradient)
        if self.tick % self.cfg.target_update_every == 0:
            self.target = self.primary.copy()

    def end_episode(self) -> None:
        self.schedule.anneal()

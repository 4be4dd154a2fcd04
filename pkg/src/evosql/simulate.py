"""Desk-scale simulation of the selection and rating dynamics.

Replaces generation and evolution with synthetic agents: each agent carries a
latent per-database correctness probability, and per-question outcomes are
independent Bernoulli draws. The same mode selection, roster rules, pairwise
ELO decomposition, and winner bookkeeping as the real loop apply, which makes
properties like convergence to latent strength and bounded ratings under
non-transitive matchups cheap to verify.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations

from . import scheduler
from .errors import InvalidStateError
from .registry import AgentRegistry
from .scheduler import iteration_rng

DEFAULT_QUESTIONS_PER_DATABASE = 30
DEFAULT_EVOLVE_DELTA = 0.02
DEFAULT_EVOLVE_CAP = 0.95


@dataclass
class SyntheticAgent:
    """An agent reduced to its latent accuracy."""

    agent_id: str
    latents: dict[str, float] = field(default_factory=dict)
    global_accuracy: float | None = None

    def __post_init__(self):
        for db, p in self.latents.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"latent for {db!r} outside [0, 1]: {p}")
        if self.global_accuracy is not None and not 0.0 <= self.global_accuracy <= 1.0:
            raise ValueError(f"global accuracy outside [0, 1]: {self.global_accuracy}")

    def latent_for(self, db_id: str) -> float:
        if db_id in self.latents:
            return self.latents[db_id]
        if self.global_accuracy is None:
            raise InvalidStateError(f"{self.agent_id} has no latent for {db_id!r}")
        return self.global_accuracy

    def mean_latent(self, databases: list[str]) -> float:
        return sum(self.latent_for(db) for db in databases) / len(databases)


@dataclass
class SimulationConfig:
    iterations: int = 100
    seed: int = 0
    databases: list[str] = field(default_factory=lambda: [f"db{i}" for i in range(1, 7)])
    questions_per_database: int = DEFAULT_QUESTIONS_PER_DATABASE
    databases_per_iteration: int = scheduler.DATABASES_PER_ITERATION
    evolve: bool = False
    evolve_delta: float = DEFAULT_EVOLVE_DELTA
    evolve_cap: float = DEFAULT_EVOLVE_CAP
    late_stage_start: int = scheduler.DEFAULT_LATE_STAGE_START

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.databases:
            raise ValueError("databases must be non-empty")


@dataclass
class SimulationResult:
    final_ratings: dict[str, float]
    trajectories: list[dict[str, float]]
    accuracies: list[dict[str, Fraction]]
    winners: list[list[str]]
    kendall_tau: float
    latent_strengths: dict[str, float]


def kendall_tau(xs: list[float], ys: list[float]) -> float:
    """Tau-a rank correlation over paired observations."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("need two paired sequences of length >= 2")
    concordant = discordant = 0
    for (x1, y1), (x2, y2) in combinations(zip(xs, ys), 2):
        product = (x1 - x2) * (y1 - y2)
        if product > 0:
            concordant += 1
        elif product < 0:
            discordant += 1
    pairs = len(xs) * (len(xs) - 1) / 2
    return (concordant - discordant) / pairs


def _default_evolve_rule(parents: list[SyntheticAgent], config: SimulationConfig,
                         agent_id: str) -> SyntheticAgent:
    """New latent per database: best parent latent plus a delta, capped."""
    latents = {
        db: min(config.evolve_cap, max(p.latent_for(db) for p in parents) + config.evolve_delta)
        for db in config.databases
    }
    return SyntheticAgent(agent_id=agent_id, latents=latents)


def simulate(
    population: list[SyntheticAgent],
    config: SimulationConfig,
    evolve_rule=None,
) -> SimulationResult:
    """Run the evolution cycle with synthetic outcomes.

    Iteration 1 fields the whole initial population; later iterations use
    the regular mode machinery. With config.evolve false every later
    iteration is a none-mode roster, keeping the population fixed; with it
    true, evolve-mode iterations add a synthetic agent derived from the
    pending winners (or the top two by ELO) via evolve_rule.
    """
    if len(population) < 2:
        raise ValueError("population must have at least 2 agents")
    evolve_rule = evolve_rule or _default_evolve_rule

    registry = AgentRegistry()
    agents = {}
    for agent in population:
        registry.register_record(agent.agent_id)
        agents[agent.agent_id] = agent

    trajectories: list[dict[str, float]] = []
    accuracy_history: list[dict[str, Fraction]] = []
    winner_history: list[list[str]] = []

    for iteration in range(1, config.iterations + 1):
        rng = iteration_rng(config.seed, iteration)
        databases = rng.sample(
            config.databases, min(config.databases_per_iteration, len(config.databases))
        )

        if iteration == 1:
            competitors = [a.agent_id for a in population]
        else:
            mode = (
                scheduler.choose_mode(iteration, rng, config.late_stage_start)
                if config.evolve
                else scheduler.MODE_NONE
            )
            new_agent_id = None
            if mode == scheduler.MODE_EVOLVE:
                parent_ids = registry.pending_winners() or registry.top_by_elo(2)
                parents = [agents[a] for a in parent_ids]
                new_agent_id = f"iter{iteration}_evolved"
                new_agent = evolve_rule(parents, config, new_agent_id)
                registry.register_record(new_agent_id)
                agents[new_agent_id] = new_agent
            competitors = scheduler.select_competitors(mode, registry, new_agent_id, rng)

        accuracies: dict[str, Fraction] = {}
        for agent_id in competitors:
            agent = agents[agent_id]
            correct = 0
            total = 0
            for db in databases:
                latent = agent.latent_for(db)
                for _ in range(config.questions_per_database):
                    total += 1
                    if rng.random() < latent:
                        correct += 1
            accuracies[agent_id] = Fraction(correct, total)

        registry.elo.decompose_and_update(
            iteration, [(agent_id, accuracies[agent_id]) for agent_id in competitors]
        )
        winners = scheduler.determine_winners(accuracies)
        registry.record_iteration_outcome(competitors, winners)

        trajectories.append({a: r.rating.value for a, r in registry.records.items()})
        accuracy_history.append(accuracies)
        winner_history.append(sorted(winners))

    final_ratings = {a: r.rating.value for a, r in registry.records.items()}
    latent_strengths = {a: agents[a].mean_latent(config.databases) for a in final_ratings}
    ordered = sorted(final_ratings)
    tau = kendall_tau(
        [latent_strengths[a] for a in ordered], [final_ratings[a] for a in ordered]
    )
    return SimulationResult(
        final_ratings=final_ratings,
        trajectories=trajectories,
        accuracies=accuracy_history,
        winners=winner_history,
        kendall_tau=tau,
        latent_strengths=latent_strengths,
    )

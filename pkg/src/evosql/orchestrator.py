"""End-to-end run loop: sampling, evolution, evaluation, rating, persistence.

One run executes N iterations. Iteration 1 evaluates the initial agent set
as given; from iteration 2 on, the mode (evolve/challenger/none) decides
whether a new agent is evolved (with Deep Focus refinement) before the
roster is selected. Each iteration samples databases and questions, runs
every competitor's analysis tool, evaluates all competitors on identical
prompts, decomposes accuracies into pairwise ELO updates, and records the
winners.

State is one JSON file plus per-iteration artifact directories. Artifact
paths inside the state are relative to the output directory and no clocks
are persisted, so two runs with the same seed produce byte-identical state;
per-iteration RNG is derived from (run_seed, iteration), so a halted run
resumes onto exactly the trajectory of an uninterrupted one.
"""

import json
import logging
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import scheduler
from .analyzer import estimate_tokens, run_agent_tool
from .backends import (
    HttpChatBackend,
    HttpEvolutionBackend,
    NullEvolutionBackend,
    OracleGenerationBackend,
    ScriptedEvolutionBackend,
    ScriptedGenerationBackend,
)
from .defaults import DEFAULT_STRATEGY, write_naive_package
from .elo import MatchRecord
from .errors import AnalysisError, EvolutionError, InvalidStateError
from .evolution import build_context, deep_focus, evolve_agent
from .harness import evaluate_agent, execute_gold, write_error_analysis
from .registry import AgentRegistry, load_package
from .scheduler import IterationPlan, QuestionItem, iteration_rng

logger = logging.getLogger(__name__)

STATE_SCHEMA_VERSION = 1
STATE_FILENAME = "run_state.json"
AGENTS_DIRNAME = "agents"
STRATEGY_FILENAME = "strategy.md"


@dataclass
class RunConfig:
    """Inputs of one evolution run."""

    data_root: Path
    output_dir: Path
    iterations: int = 10
    run_seed: int = 0
    strategy_path: Path | None = None
    gen_backend: str = "oracle"
    evo_backend: str = "none"
    workers: int = 4
    deep_focus_k: int = 1
    late_stage_start: int = scheduler.DEFAULT_LATE_STAGE_START
    databases_per_iteration: int = scheduler.DATABASES_PER_ITERATION
    questions_per_database: int = scheduler.QUESTIONS_PER_DATABASE
    sql_timeout: float = 30.0
    tool_timeout: float = 300.0
    token_budget: int = 150_000
    max_rounds: int = 2
    initial_agents: list[Path] = field(default_factory=list)
    price_request_per_1k: float = 0.0
    price_response_per_1k: float = 0.0

    def __post_init__(self):
        self.data_root = Path(self.data_root)
        self.output_dir = Path(self.output_dir)
        if self.strategy_path is not None:
            self.strategy_path = Path(self.strategy_path)
        self.initial_agents = [Path(p) for p in self.initial_agents]
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.late_stage_start < 2:
            raise ValueError("late_stage_start must be >= 2")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.deep_focus_k < 0:
            raise ValueError("deep_focus_k must be >= 0")

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


@dataclass
class IterationRecord:
    """Everything persisted about one completed iteration."""

    iteration: int
    mode: str
    databases: list[str]
    questions: dict[str, list[QuestionItem]]
    competitors: list[str]
    new_agent: str | None
    accuracies: dict[str, tuple[int, int]]
    winners: list[str]
    match_records: list[MatchRecord]
    matches: dict[str, dict[tuple[str, int], bool]]
    excluded_questions: list[tuple[str, int]]
    tool_fallbacks: dict[str, dict[str, str]]
    tokens: dict[str, dict[str, int]]
    error_report: str = ""
    report_path: str = ""

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mode": self.mode,
            "databases": list(self.databases),
            "questions": {
                db: [q.to_dict() for q in items] for db, items in self.questions.items()
            },
            "competitors": list(self.competitors),
            "new_agent": self.new_agent,
            "accuracies": {a: list(mt) for a, mt in self.accuracies.items()},
            "winners": list(self.winners),
            "match_records": [m.to_dict() for m in self.match_records],
            "matches": {
                agent: {f"{db}:{qid}": ok for (db, qid), ok in sorted(per_agent.items())}
                for agent, per_agent in self.matches.items()
            },
            "excluded_questions": [[db, qid] for db, qid in self.excluded_questions],
            "tool_fallbacks": self.tool_fallbacks,
            "tokens": self.tokens,
            "report_path": self.report_path,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationRecord":
        matches = {}
        for agent, per_agent in data["matches"].items():
            matches[agent] = {}
            for key, ok in per_agent.items():
                db, _, qid = key.rpartition(":")
                matches[agent][(db, int(qid))] = ok
        return cls(
            iteration=data["iteration"],
            mode=data["mode"],
            databases=list(data["databases"]),
            questions={
                db: [QuestionItem.from_dict(q) for q in items]
                for db, items in data["questions"].items()
            },
            competitors=list(data["competitors"]),
            new_agent=data["new_agent"],
            accuracies={a: (mt[0], mt[1]) for a, mt in data["accuracies"].items()},
            winners=list(data["winners"]),
            match_records=[MatchRecord.from_dict(m) for m in data["match_records"]],
            matches=matches,
            excluded_questions=[(db, qid) for db, qid in data["excluded_questions"]],
            tool_fallbacks=data["tool_fallbacks"],
            tokens=data["tokens"],
            report_path=data["report_path"],
        )


@dataclass
class RunState:
    """Persisted run progress: completed iterations plus registry snapshot."""

    run_seed: int
    iterations: list[IterationRecord] = field(default_factory=list)
    registry_snapshot: dict = field(default_factory=dict)
    schema_version: int = STATE_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "run_seed": self.run_seed,
            "iterations": [record.to_dict() for record in self.iterations],
            "registry": self.registry_snapshot,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunState":
        if data.get("schema_version") != STATE_SCHEMA_VERSION:
            raise InvalidStateError(
                f"state schema version {data.get('schema_version')!r} is not "
                f"{STATE_SCHEMA_VERSION}"
            )
        return cls(
            run_seed=data["run_seed"],
            iterations=[IterationRecord.from_dict(r) for r in data["iterations"]],
            registry_snapshot=data["registry"],
        )


def save_state(state: RunState, output_dir: Path) -> Path:
    path = output_dir / STATE_FILENAME
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(state.to_dict(), indent=2, sort_keys=True) + "\n")
    tmp.replace(path)
    return path


def load_state(output_dir: Path) -> RunState | None:
    path = Path(output_dir) / STATE_FILENAME
    if not path.is_file():
        return None
    return RunState.from_dict(json.loads(path.read_text()))


def snapshot_registry(registry: AgentRegistry, output_dir: Path) -> dict:
    snapshot = {}
    for agent_id, record in registry.records.items():
        pkg = registry.packages[agent_id]
        snapshot[agent_id] = {
            "name": pkg.name,
            "iteration_created": pkg.iteration_created,
            "package_dir": str(pkg.root_dir.relative_to(output_dir)),
            "lineage": list(pkg.lineage),
            "execution_mode": pkg.execution_mode,
            "rating_value": record.rating.value,
            "rating_games": record.rating.games,
            "tests": record.tests,
            "iteration_wins": record.iteration_wins,
            "pending_winner": record.pending_winner,
        }
    return snapshot


def restore_registry(snapshot: dict, output_dir: Path) -> AgentRegistry:
    registry = AgentRegistry()
    for agent_id in sorted(snapshot):
        entry = snapshot[agent_id]
        pkg = load_package(
            output_dir / entry["package_dir"],
            agent_id=agent_id,
            iteration_created=entry["iteration_created"],
        )
        pkg.lineage = list(entry["lineage"])
        record = registry.register(pkg)
        record.rating.value = entry["rating_value"]
        record.rating.games = entry["rating_games"]
        record.tests = entry["tests"]
        record.iteration_wins = entry["iteration_wins"]
        record.pending_winner = entry["pending_winner"]
    return registry


def build_generation_backend(spec: str, question_pool=None):
    """Instantiate a generation backend from its CLI spec string.

    Specs: "oracle" (answers gold SQL; needs the question pool),
    "scripted:<fixture.json>", "http:<model>@<base_url>".
    """
    scheme, _, rest = spec.partition(":")
    if scheme == "oracle":
        if question_pool is None:
            raise ValueError("oracle backend needs the question pool")
        return OracleGenerationBackend.from_question_pool(question_pool)
    if scheme == "scripted":
        return ScriptedGenerationBackend.from_fixture(rest)
    if scheme == "http":
        model, _, base_url = rest.partition("@")
        if not model or not base_url:
            raise ValueError("http backend spec must be http:<model>@<base_url>")
        return HttpChatBackend(base_url, model)
    raise ValueError(f"unknown generation backend spec {spec!r}")


def build_evolution_backend(spec: str):
    """Specs: "none", "scripted:<fixture.json>", "http:<model>@<base_url>"."""
    scheme, _, rest = spec.partition(":")
    if scheme == "none":
        return NullEvolutionBackend()
    if scheme == "scripted":
        return ScriptedEvolutionBackend.from_fixture(rest)
    if scheme == "http":
        model, _, base_url = rest.partition("@")
        if not model or not base_url:
            raise ValueError("http backend spec must be http:<model>@<base_url>")
        return HttpEvolutionBackend(base_url, model)
    raise ValueError(f"unknown evolution backend spec {spec!r}")


class Orchestrator:
    """Owns the registry and rating state for one run (single writer)."""

    def __init__(self, config: RunConfig, gen_backend=None, evo_backend=None):
        self.config = config
        self.output_dir = config.output_dir
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.db_pool, self.question_pool = scheduler.load_question_pool(config.data_root)
        self.gen_backend = gen_backend or build_generation_backend(
            config.gen_backend, self.question_pool
        )
        self.evo_backend = evo_backend or build_evolution_backend(config.evo_backend)
        self.strategy_path = self._materialize_strategy()
        self._analysis_cache: dict[tuple[str, str], str] = {}
        self._fallback_notes: dict[tuple[str, str], str] = {}

        existing = load_state(self.output_dir)
        if existing is not None:
            self.state = existing
            self.registry = restore_registry(existing.registry_snapshot, self.output_dir)
            logger.info("resuming run at iteration %d", len(self.state.iterations) + 1)
        else:
            self.state = RunState(run_seed=config.run_seed)
            self.registry = AgentRegistry()
            self._register_initial_agents()

    def _materialize_strategy(self) -> Path:
        target = self.output_dir / STRATEGY_FILENAME
        if self.config.strategy_path is not None:
            if not self.config.strategy_path.is_file():
                raise FileNotFoundError(f"strategy file not found: {self.config.strategy_path}")
            shutil.copyfile(self.config.strategy_path, target)
        elif not target.is_file():
            target.write_text(DEFAULT_STRATEGY)
        return target

    def _register_initial_agents(self) -> None:
        agents_dir = self.output_dir / AGENTS_DIRNAME
        agents_dir.mkdir(exist_ok=True)
        sources = self.config.initial_agents
        if not sources:
            naive_dir = agents_dir / "naive"
            if not naive_dir.exists():
                write_naive_package(naive_dir)
            pkg = load_package(naive_dir, iteration_created=0)
            self.registry.register(pkg)
            return
        for source in sources:
            name = load_package(source).name
            dest = agents_dir / name
            if not dest.exists():
                shutil.copytree(source, dest)
            # Packages are copied under the output dir so the run state stays
            # self-contained and resumable with relative paths.
            pkg = load_package(dest, iteration_created=0)
            self.registry.register(pkg)

    # -- per-iteration pieces -------------------------------------------------

    def _analysis_for(self, agent_id: str, db_id: str) -> str | None:
        key = (agent_id, db_id)
        if key not in self._analysis_cache:
            pkg = self.registry.package(agent_id)
            db_file = scheduler.database_path(self.config.data_root, db_id)
            try:
                result = run_agent_tool(pkg, db_file, timeout=self.config.tool_timeout)
            except AnalysisError as exc:
                logger.error("analysis blocked for (%s, %s): %s", agent_id, db_id, exc)
                self._analysis_cache[key] = None
                self._fallback_notes[key] = str(exc)
                return None
            tokens = estimate_tokens(result.text)
            if tokens > self.config.token_budget:
                # Oversized analyses would overflow the generation context;
                # the (agent, db) pair is evaluation-blocked instead.
                logger.error("analysis for (%s, %s) is %d tokens, budget %d",
                             agent_id, db_id, tokens, self.config.token_budget)
                self._analysis_cache[key] = None
                self._fallback_notes[key] = f"analysis over token budget ({tokens})"
                return None
            self._analysis_cache[key] = result.text
            if result.fallback:
                self._fallback_notes[key] = result.reason or "fallback"
        return self._analysis_cache[key]

    def _evolve_for_iteration(self, iteration: int, iter_dir: Path) -> str | None:
        """Evolve, deep-focus, and register a new agent; None on failure."""
        context = build_context(self.registry, self.state.iterations, self.strategy_path)
        context.iteration = iteration
        try:
            pkg, _reasoning = evolve_agent(context, self.evo_backend, iter_dir)
        except EvolutionError as exc:
            logger.warning("iteration %d: evolution failed (%s); degrading to none-mode",
                           iteration, exc)
            return None
        pkg = deep_focus(
            pkg,
            self.evo_backend,
            self.state.iterations,
            k=self.config.deep_focus_k,
            eval_fn=self._deep_focus_eval,
        )
        self.registry.register(pkg)
        return pkg.id

    def _deep_focus_eval(self, pkg, record: IterationRecord):
        """Evaluate a candidate package on a past iteration's tasks."""
        plan = IterationPlan(
            iteration=record.iteration,
            mode=record.mode,
            databases=list(record.databases),
            questions=record.questions,
            competitors=[pkg.id],
        )
        analyses = {}
        for db_id in plan.databases:
            db_file = scheduler.database_path(self.config.data_root, db_id)
            try:
                analyses[db_id] = run_agent_tool(pkg, db_file, timeout=self.config.tool_timeout).text
            except AnalysisError:
                analyses[db_id] = None
        gold = execute_gold(plan, self.config.data_root, self.config.sql_timeout)
        evaluation = evaluate_agent(
            pkg, plan, self.gen_backend, analyses, gold, self.config.data_root,
            sql_timeout=self.config.sql_timeout,
            max_rounds=self.config.max_rounds,
            workers=self.config.workers,
        )
        matches = {(o.db_id, o.question_id): o.match for o in evaluation.outcomes}
        return evaluation.accuracy, matches

    def run_iteration(self, iteration: int) -> IterationRecord:
        rng = iteration_rng(self.config.run_seed, iteration)
        iter_dir = self.output_dir / f"iter_{iteration}"
        iter_dir.mkdir(exist_ok=True)

        databases, questions = scheduler.sample_iteration_tasks(
            self.db_pool,
            self.question_pool,
            rng,
            self.config.databases_per_iteration,
            self.config.questions_per_database,
        )

        new_agent = None
        if iteration == 1:
            # The first iteration evaluates the initial agent set as given.
            mode = scheduler.MODE_NONE
            competitors = self.registry.agent_ids()
        else:
            mode = scheduler.choose_mode(iteration, rng, self.config.late_stage_start)
            if mode == scheduler.MODE_EVOLVE:
                new_agent = self._evolve_for_iteration(iteration, iter_dir)
                if new_agent is None:
                    mode = scheduler.MODE_NONE
            competitors = scheduler.select_competitors(mode, self.registry, new_agent, rng)

        plan = IterationPlan(
            iteration=iteration,
            mode=mode,
            databases=databases,
            questions=questions,
            competitors=competitors,
            new_agent_slot=mode == scheduler.MODE_EVOLVE,
        )
        logger.info("iteration %d: mode=%s databases=%s competitors=%s",
                    iteration, mode, databases, competitors)

        analyses_by_agent = {
            agent_id: {db: self._analysis_for(agent_id, db) for db in databases}
            for agent_id in competitors
        }
        gold = execute_gold(plan, self.config.data_root, self.config.sql_timeout)

        evaluations = {}
        all_outcomes = []
        for agent_id in competitors:
            evaluation = evaluate_agent(
                self.registry.package(agent_id),
                plan,
                self.gen_backend,
                analyses_by_agent[agent_id],
                gold,
                self.config.data_root,
                sql_timeout=self.config.sql_timeout,
                max_rounds=self.config.max_rounds,
                workers=self.config.workers,
            )
            evaluations[agent_id] = evaluation
            all_outcomes.extend(evaluation.outcomes)
            logger.info("iteration %d: %s scored %d/%d", iteration, agent_id,
                        evaluation.matches, evaluation.total)

        accuracies = {agent_id: ev.accuracy for agent_id, ev in evaluations.items()}
        match_records = self.registry.elo.decompose_and_update(
            iteration, [(agent_id, accuracies[agent_id]) for agent_id in competitors]
        )
        winners = scheduler.determine_winners(accuracies)
        self.registry.record_iteration_outcome(competitors, winners)

        report = write_error_analysis(iteration, all_outcomes)
        report_path = iter_dir / "error_analysis_report.md"
        report_path.write_text(report)
        (iter_dir / "plan.json").write_text(
            json.dumps(plan.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        (iter_dir / "outcomes.json").write_text(
            json.dumps([o.to_dict() for o in all_outcomes], indent=2, sort_keys=True) + "\n"
        )
        (iter_dir / "transcripts.json").write_text(
            json.dumps(
                {
                    agent_id: [
                        o.transcript.to_dict() if o.transcript else None
                        for o in ev.outcomes
                    ]
                    for agent_id, ev in evaluations.items()
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )

        record = IterationRecord(
            iteration=iteration,
            mode=mode,
            databases=databases,
            questions=questions,
            competitors=competitors,
            new_agent=new_agent,
            accuracies={a: (ev.matches, ev.total) for a, ev in evaluations.items()},
            winners=sorted(winners),
            match_records=match_records,
            matches={
                a: {(o.db_id, o.question_id): o.match for o in ev.outcomes}
                for a, ev in evaluations.items()
            },
            excluded_questions=sorted(gold.defective),
            tool_fallbacks={
                a: {
                    db: self._fallback_notes[(a, db)]
                    for db in databases
                    if (a, db) in self._fallback_notes
                }
                for a in competitors
            },
            tokens={
                a: {
                    "request": ev.request_tokens,
                    "response": ev.response_tokens,
                    "calls": ev.backend_calls,
                }
                for a, ev in evaluations.items()
            },
            error_report=report,
            report_path=str(report_path.relative_to(self.output_dir)),
        )
        return record

    def run(self) -> RunState:
        start_iteration = len(self.state.iterations) + 1
        for iteration in range(start_iteration, self.config.iterations + 1):
            started = time.monotonic()
            record = self.run_iteration(iteration)
            self.state.iterations.append(record)
            self.state.registry_snapshot = snapshot_registry(self.registry, self.output_dir)
            save_state(self.state, self.output_dir)
            # Wall clock is logged, never persisted, to keep state files
            # byte-identical across reruns.
            logger.info("iteration %d finished in %.1fs", iteration, time.monotonic() - started)
        return self.state


def run(config: RunConfig, gen_backend=None, evo_backend=None) -> RunState:
    """Run (or resume) the evolution cycle described by config."""
    return Orchestrator(config, gen_backend, evo_backend).run()


def resume(config: RunConfig, gen_backend=None, evo_backend=None) -> RunState:
    """Resume a halted run; fails if no state exists yet."""
    if load_state(config.output_dir) is None:
        raise InvalidStateError(f"no {STATE_FILENAME} under {config.output_dir} to resume")
    return run(config, gen_backend, evo_backend)


def leaderboard(state: RunState) -> str:
    """Render the final standings from a run state (pure function)."""
    if not state.iterations:
        raise InvalidStateError("run state has no completed iterations")
    rows = []
    for agent_id, entry in state.registry_snapshot.items():
        rows.append(
            (
                -entry["rating_value"],
                entry["tests"],
                agent_id,
                entry,
            )
        )
    rows.sort()
    lines = ["# Leaderboard", ""]
    lines.append(f"{'rank':<5} {'agent':<40} {'rating':>8} {'games':>6} "
                 f"{'tests':>6} {'wins':>5}  lineage")
    for rank, (_, _, agent_id, entry) in enumerate(rows, start=1):
        lineage = ", ".join(entry["lineage"]) or "-"
        lines.append(
            f"{rank:<5} {agent_id:<40} {entry['rating_value']:>8.1f} "
            f"{entry['rating_games']:>6} {entry['tests']:>6} "
            f"{entry['iteration_wins']:>5}  {lineage}"
        )
    lines.append("")
    return "\n".join(lines)


def token_cost_accounting(
    state: RunState,
    price_request_per_1k: float = 0.0,
    price_response_per_1k: float = 0.0,
) -> dict:
    """Aggregate token counts and priced cost per iteration and per agent."""

    def cost(request: int, response: int) -> float:
        return request / 1000 * price_request_per_1k + response / 1000 * price_response_per_1k

    per_iteration = {}
    per_agent: dict[str, dict[str, float]] = {}
    total = {"request": 0, "response": 0, "calls": 0}
    for record in state.iterations:
        iteration_totals = {"request": 0, "response": 0, "calls": 0}
        for agent_id, usage in record.tokens.items():
            iteration_totals["request"] += usage["request"]
            iteration_totals["response"] += usage["response"]
            iteration_totals["calls"] += usage["calls"]
            agent_entry = per_agent.setdefault(
                agent_id, {"request": 0, "response": 0, "calls": 0}
            )
            agent_entry["request"] += usage["request"]
            agent_entry["response"] += usage["response"]
            agent_entry["calls"] += usage["calls"]
        iteration_totals["cost"] = cost(iteration_totals["request"], iteration_totals["response"])
        per_iteration[record.iteration] = iteration_totals
        for key in ("request", "response", "calls"):
            total[key] += iteration_totals[key]
    for entry in per_agent.values():
        entry["cost"] = cost(entry["request"], entry["response"])
    total["cost"] = cost(total["request"], total["response"])
    return {"per_iteration": per_iteration, "per_agent": per_agent, "total": total}

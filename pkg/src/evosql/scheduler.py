"""Per-iteration task sampling, mode selection, and competitor rosters.

All functions here are pure over registry snapshots plus an explicit RNG, so
they can be called from any thread and replayed deterministically. The
per-iteration RNG is derived from (run_seed, iteration) with a stable hash,
so a resumed run resamples exactly what an uninterrupted run would have.
"""

import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

from .errors import DataValidationError, InvalidStateError
from .registry import AgentRegistry

QUESTIONS_FILENAME = "questions.json"

DATABASES_PER_ITERATION = 5
QUESTIONS_PER_DATABASE = 30

MODE_EVOLVE = "evolve"
MODE_CHALLENGER = "challenger"
MODE_NONE = "none"

# Iterations before this one always evolve; from it on, modes are drawn
# evolve/challenger/none with the probabilities below.
DEFAULT_LATE_STAGE_START = 12
EVOLVE_PROBABILITY = 0.70
CHALLENGER_PROBABILITY = 0.15

EVOLVE_ROSTER_SIZE = 3
NON_EVOLVE_ROSTER_SIZE = 4
TOP_POOL_SIZE = 2
ABOVE_AVERAGE_RATING = 1500.0

DIFFICULTIES = ("simple", "moderate", "challenging")


@dataclass
class QuestionItem:
    """One benchmark question bound to a database."""

    question_id: int
    db_id: str
    question: str
    evidence: str = ""
    gold_sql: str = ""
    difficulty: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "db_id": self.db_id,
            "question": self.question,
            "evidence": self.evidence,
            "gold_sql": self.gold_sql,
            "difficulty": self.difficulty,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuestionItem":
        return cls(**data)


@dataclass
class IterationPlan:
    """Everything one iteration needs: mode, roster, and sampled tasks."""

    iteration: int
    mode: str
    databases: list[str]
    questions: dict[str, list[QuestionItem]]
    competitors: list[str]
    new_agent_slot: bool = False

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "mode": self.mode,
            "databases": list(self.databases),
            "questions": {
                db: [q.to_dict() for q in items] for db, items in self.questions.items()
            },
            "competitors": list(self.competitors),
            "new_agent_slot": self.new_agent_slot,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationPlan":
        return cls(
            iteration=data["iteration"],
            mode=data["mode"],
            databases=list(data["databases"]),
            questions={
                db: [QuestionItem.from_dict(q) for q in items]
                for db, items in data["questions"].items()
            },
            competitors=list(data["competitors"]),
            new_agent_slot=data["new_agent_slot"],
        )


def iteration_rng(run_seed: int, iteration: int) -> random.Random:
    """Stable per-iteration RNG so resumed runs resample identically."""
    digest = hashlib.sha256(f"{run_seed}:{iteration}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def database_path(data_root: str | Path, db_id: str) -> Path:
    return Path(data_root) / db_id / f"{db_id}.sqlite"


def load_question_pool(data_root: str | Path) -> tuple[list[str], dict[str, list[QuestionItem]]]:
    """Load the database pool and per-database question lists.

    data_root holds one directory per database (<db_id>/<db_id>.sqlite) and
    a questions.json array of records with question_id, db_id, question,
    evidence, SQL, difficulty.
    """
    root = Path(data_root)
    questions_file = root / QUESTIONS_FILENAME
    if not questions_file.is_file():
        raise FileNotFoundError(f"no {QUESTIONS_FILENAME} in {root}")

    db_pool = []
    for child in sorted(root.iterdir()):
        if not child.is_dir():
            continue
        if not (child / f"{child.name}.sqlite").is_file():
            raise DataValidationError(
                f"database directory {child} has no {child.name}.sqlite"
            )
        db_pool.append(child.name)

    records = json.loads(questions_file.read_text())
    question_pool: dict[str, list[QuestionItem]] = {db: [] for db in db_pool}
    offenders = sorted(
        {rec["db_id"] for rec in records if rec["db_id"] not in question_pool}
    )
    if offenders:
        raise DataValidationError(
            f"questions reference unknown databases: {', '.join(offenders)}"
        )
    for rec in records:
        question_pool[rec["db_id"]].append(
            QuestionItem(
                question_id=int(rec["question_id"]),
                db_id=rec["db_id"],
                question=rec["question"],
                evidence=rec.get("evidence", "") or "",
                gold_sql=rec.get("SQL", rec.get("gold_sql", "")),
                difficulty=rec.get("difficulty"),
            )
        )
    return db_pool, question_pool


def sample_iteration_tasks(
    db_pool: list[str],
    question_pool: dict[str, list[QuestionItem]],
    rng: random.Random,
    databases_per_iteration: int = DATABASES_PER_ITERATION,
    questions_per_database: int = QUESTIONS_PER_DATABASE,
) -> tuple[list[str], dict[str, list[QuestionItem]]]:
    """Sample databases and questions uniformly without replacement.

    Pools smaller than the target counts are taken whole, which keeps toy
    datasets usable.
    """
    if not db_pool:
        raise InvalidStateError("database pool is empty")
    databases = rng.sample(db_pool, min(databases_per_iteration, len(db_pool)))
    questions = {}
    for db in databases:
        pool = question_pool.get(db, [])
        questions[db] = rng.sample(pool, min(questions_per_database, len(pool)))
    return databases, questions


def choose_mode(
    iteration: int, rng: random.Random, late_stage_start: int = DEFAULT_LATE_STAGE_START
) -> str:
    """Iteration mode: always evolve early, then 70/15/15 late-stage draws."""
    if iteration < 1:
        raise ValueError("iteration numbering starts at 1")
    if iteration < late_stage_start:
        return MODE_EVOLVE
    draw = rng.random()
    if draw < EVOLVE_PROBABILITY:
        return MODE_EVOLVE
    if draw < EVOLVE_PROBABILITY + CHALLENGER_PROBABILITY:
        return MODE_CHALLENGER
    return MODE_NONE


def select_competitors(
    mode: str,
    registry: AgentRegistry,
    new_agent_id: str | None = None,
    rng: random.Random | None = None,
) -> list[str]:
    """Build the competitor roster for one iteration.

    evolve: every pending winner, the new agent, then fill to three with a
    uniform pick from the top two by ELO (excluding those already seated).
    The roster grows past three rather than dropping a tied winner.

    challenger: four agents, preferring non-pending-winners with rating
    above 1500 ordered by fewest tests (ties: rating descending, then id);
    shortfalls are backfilled from the whole population by fewest tests.

    none: four agents, each slot a uniform pick from the top two by ELO
    among agents not already seated.

    A population smaller than the roster size competes whole.
    """
    if len(registry) == 0:
        raise InvalidStateError("cannot select competitors from an empty population")

    if mode == MODE_EVOLVE:
        if new_agent_id is None:
            raise ValueError("evolve mode requires the newly evolved agent id")
        if new_agent_id not in registry:
            raise InvalidStateError(f"new agent {new_agent_id!r} is not registered")
        roster = [a for a in registry.pending_winners() if a != new_agent_id]
        roster.append(new_agent_id)
        target = max(EVOLVE_ROSTER_SIZE, len(roster))
        while len(roster) < target:
            candidates = registry.top_by_elo(TOP_POOL_SIZE, exclude=set(roster))
            if not candidates:
                break
            roster.append(rng.choice(candidates) if rng else candidates[0])
        return roster

    if mode == MODE_CHALLENGER:
        records = list(registry.records.values())
        qualified = [r for r in records if r.rating.value > ABOVE_AVERAGE_RATING]
        qualified.sort(key=lambda r: (r.pending_winner, r.tests, -r.rating.value, r.agent_id))
        roster = [r.agent_id for r in qualified[:NON_EVOLVE_ROSTER_SIZE]]
        if len(roster) < NON_EVOLVE_ROSTER_SIZE:
            rest = [r for r in records if r.agent_id not in roster]
            rest.sort(key=lambda r: (r.tests, -r.rating.value, r.agent_id))
            for record in rest:
                if len(roster) >= NON_EVOLVE_ROSTER_SIZE:
                    break
                roster.append(record.agent_id)
        return roster

    if mode == MODE_NONE:
        roster: list[str] = []
        for _ in range(NON_EVOLVE_ROSTER_SIZE):
            candidates = registry.top_by_elo(TOP_POOL_SIZE, exclude=set(roster))
            if not candidates:
                break
            roster.append(rng.choice(candidates) if rng else candidates[0])
        return roster

    raise ValueError(f"unknown mode {mode!r}")


def determine_winners(accuracies: dict[str, object]) -> set[str]:
    """All agents attaining the maximum accuracy (ties allowed)."""
    if not accuracies:
        raise ValueError("accuracies must be non-empty")
    best = max(accuracies.values())
    return {agent for agent, acc in accuracies.items() if acc == best}

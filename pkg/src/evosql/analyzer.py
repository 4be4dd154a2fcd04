"""Deterministic SQLite analysis with size-adaptive depth.

Produces a fixed 10-section plain-text report whose depth scales down as the
schema grows (sample counts, enum listings, semantic and cross-table passes),
keeping the output inside a token budget. Also provides the raw-DDL baseline
extractor and the child-process runner for packaged agent tools.

Everything here is pure given the database file: queries are ordered, sample
values are the first N distinct values ascending, and no wall-clock state
leaks into the output, so analyzing the same file twice is byte-identical.
"""

import logging
import math
import re
import shlex
import shutil
import sqlite3
import subprocess
import sys
import tempfile
import urllib.parse
from dataclasses import dataclass
from pathlib import Path

from .errors import AnalysisError, BudgetExceededError
from .registry import AgentPackage, TOOLS_DIRNAME

logger = logging.getLogger(__name__)

DEFAULT_TOKEN_BUDGET = 150_000
DEFAULT_TOOL_TIMEOUT = 300.0

# A column is treated as categorical when it has at most this many distinct
# non-null values.
CATEGORICAL_DISTINCT_MAX = 20
# Distinct values probed per text column for format detection.
FORMAT_PROBE_VALUES = 20
FORMAT_MATCH_FRACTION = 0.8
SAMPLE_RENDER_MAX = 60

SECTION_TITLES = (
    "Schema DDL",
    "Table Overview",
    "Column Details",
    "Foreign Key Relationships",
    "Enumerated Values",
    "Numeric Ranges",
    "Format Detection",
    "Semantic Patterns",
    "Cross-Table Validation",
    "Query Guidance",
)

OMITTED_STUB = "omitted at this tier"
EMPTY_BODY = "none"

TIER_ORDER = ("Small", "Medium", "Large", "Ultra")


@dataclass(frozen=True)
class FeatureConfig:
    """Analysis depth knobs for one size tier."""

    samples_per_column: int
    enum_value_limit: int | None  # None = unlimited, 0 = section omitted
    semantic_patterns: str  # full | essential | skip
    cross_table_validation: str  # full | critical | skip


TIER_CONFIGS = {
    "Small": FeatureConfig(10, None, "full", "full"),
    "Medium": FeatureConfig(5, 15, "essential", "critical"),
    "Large": FeatureConfig(3, 5, "skip", "skip"),
    "Ultra": FeatureConfig(1, 0, "skip", "skip"),
}


@dataclass(frozen=True)
class SizeTier:
    """Size classification by total column count over base tables."""

    tier: str
    total_columns: int


def classify_size(total_columns: int) -> SizeTier:
    """Small <=150 columns, Medium 151-300, Large 301-400, Ultra >400."""
    if total_columns < 0:
        raise ValueError("total_columns must be >= 0")
    if total_columns <= 150:
        tier = "Small"
    elif total_columns <= 300:
        tier = "Medium"
    elif total_columns <= 400:
        tier = "Large"
    else:
        tier = "Ultra"
    return SizeTier(tier=tier, total_columns=total_columns)


@dataclass
class DatabaseAnalysis:
    """The rendered 10-section analysis plus tier and statistics metadata."""

    db_id: str
    tier: SizeTier
    sections: list[tuple[str, str]]
    text: str
    token_estimate: int
    stats: dict


def estimate_tokens(text: str) -> int:
    """Cheap token estimate: one token per four bytes, rounded up."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def _connect_readonly(db_path: str | Path) -> sqlite3.Connection:
    quoted = urllib.parse.quote(str(Path(db_path)))
    return sqlite3.connect(f"file:{quoted}?mode=ro", uri=True)


def extract_naive_schema(db_path: str | Path) -> str:
    """Raw DDL dump: every non-null schema statement suffixed ';', ordered
    by (table name, object type descending, object name)."""
    try:
        conn = _connect_readonly(db_path)
        try:
            rows = conn.execute(
                "SELECT sql || ';' FROM sqlite_master "
                "WHERE sql IS NOT NULL "
                "ORDER BY tbl_name, type DESC, name"
            ).fetchall()
        finally:
            conn.close()
    except sqlite3.Error as exc:
        raise AnalysisError(f"cannot read {db_path}: {exc}") from exc
    return "\n".join(sql for (sql,) in rows)


def _qident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _base_tables(conn: sqlite3.Connection) -> list[str]:
    rows = conn.execute(
        "SELECT name FROM sqlite_master "
        "WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
    ).fetchall()
    return [name for (name,) in rows]


def _table_columns(conn: sqlite3.Connection, table: str) -> list[tuple]:
    # (cid, name, declared type, notnull, default, pk)
    return conn.execute(f"PRAGMA table_info({_qident(table)})").fetchall()


def _primary_key_columns(conn: sqlite3.Connection, table: str) -> list[str]:
    cols = [(c[5], c[1]) for c in _table_columns(conn, table) if c[5] > 0]
    return [name for _, name in sorted(cols)]


@dataclass(frozen=True)
class _ForeignKey:
    table: str
    from_cols: tuple[str, ...]
    ref_table: str
    to_cols: tuple[str, ...]


def _foreign_keys(conn: sqlite3.Connection, table: str) -> list[_ForeignKey]:
    rows = conn.execute(f"PRAGMA foreign_key_list({_qident(table)})").fetchall()
    grouped: dict[int, list[tuple]] = {}
    for row in rows:
        grouped.setdefault(row[0], []).append(row)
    fks = []
    for fk_id in sorted(grouped):
        parts = sorted(grouped[fk_id], key=lambda r: r[1])  # by seq
        ref_table = parts[0][2]
        from_cols = tuple(p[3] for p in parts)
        to_cols = tuple(p[4] for p in parts)
        if any(c is None for c in to_cols):
            # FK references the parent's primary key implicitly.
            pk = _primary_key_columns(conn, ref_table)
            if len(pk) != len(from_cols):
                continue  # malformed; skip rather than guess
            to_cols = tuple(pk)
        fks.append(_ForeignKey(table, from_cols, ref_table, to_cols))
    return fks


def _affinity(declared: str | None) -> str:
    d = (declared or "").upper()
    if "INT" in d:
        return "INTEGER"
    if any(tok in d for tok in ("CHAR", "CLOB", "TEXT")):
        return "TEXT"
    if not d or "BLOB" in d:
        return "BLOB"
    if any(tok in d for tok in ("REAL", "FLOA", "DOUB")):
        return "REAL"
    return "NUMERIC"


def _fmt_value(value, max_len: int | None = SAMPLE_RENDER_MAX) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, bytes):
        text = f"x'{value.hex()}'"
    elif isinstance(value, str):
        text = "'" + value.replace("'", "''") + "'"
    else:
        text = str(value)
    if max_len is not None and len(text) > max_len:
        text = text[: max_len - 1] + "…"
    return text


def _distinct_values(conn, table, column, limit):
    sql = (
        f"SELECT DISTINCT {_qident(column)} FROM {_qident(table)} "
        f"WHERE {_qident(column)} IS NOT NULL ORDER BY {_qident(column)} LIMIT {int(limit)}"
    )
    return [row[0] for row in conn.execute(sql).fetchall()]


_ISO_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}([ T]\d{2}:\d{2}(:\d{2})?.*)?$")
_US_DATE_RE = re.compile(r"^\d{1,2}/\d{1,2}/\d{4}$")
_CURRENCY_SYMBOL_RE = re.compile(r"^[$€£]\s?-?\d[\d,]*(\.\d+)?$")
_TWO_DECIMAL_RE = re.compile(r"^-?\d[\d,]*\.\d{2}$")
_CODE_RE = re.compile(r"^[A-Z0-9]{2,12}$")

_TEMPORAL_NAME_RE = re.compile(r"(date|time|year|month|day|_at$)", re.IGNORECASE)

_UNIT_SUFFIXES = (
    "_pct",
    "_percent",
    "_rate",
    "_ratio",
    "_count",
    "_qty",
    "_amount",
    "_price",
    "_cost",
    "_total",
    "_kg",
    "_km",
    "_cm",
    "_mm",
    "_ms",
    "_sec",
)


def _detect_format(values: list) -> str | None:
    """Classify a text column's sampled values as date, currency, or code."""
    strings = [v for v in values if isinstance(v, str) and v]
    if not strings:
        return None
    total = len(strings)

    def fraction(pattern) -> float:
        return sum(1 for s in strings if pattern.match(s)) / total

    if fraction(_ISO_DATE_RE) >= FORMAT_MATCH_FRACTION:
        return "date (ISO)"
    if fraction(_US_DATE_RE) >= FORMAT_MATCH_FRACTION:
        return "date (MM/DD/YYYY)"
    if (
        fraction(_CURRENCY_SYMBOL_RE) >= FORMAT_MATCH_FRACTION
        or fraction(_TWO_DECIMAL_RE) >= FORMAT_MATCH_FRACTION
    ):
        return "currency"
    code_like = [s for s in strings if _CODE_RE.match(s)]
    if (
        len(code_like) / total >= FORMAT_MATCH_FRACTION
        and len({len(s) for s in code_like}) == 1
        and any(any(c.isalpha() for c in s) for s in code_like)
    ):
        return "code (fixed-length uppercase)"
    return None


class _Snapshot:
    """All per-database facts gathered once; section builders read from it."""

    def __init__(self, conn: sqlite3.Connection):
        self.tables = _base_tables(conn)
        self.columns = {t: _table_columns(conn, t) for t in self.tables}
        self.row_counts = {
            t: conn.execute(f"SELECT COUNT(*) FROM {_qident(t)}").fetchone()[0]
            for t in self.tables
        }
        self.total_columns = sum(len(cols) for cols in self.columns.values())
        self.foreign_keys = [fk for t in self.tables for fk in _foreign_keys(conn, t)]

        self.nonnull_counts: dict[tuple[str, str], int] = {}
        self.distinct_counts: dict[tuple[str, str], int] = {}
        for table in self.tables:
            for col in self.columns[table]:
                name = col[1]
                nonnull, distinct = conn.execute(
                    f"SELECT COUNT({_qident(name)}), COUNT(DISTINCT {_qident(name)}) "
                    f"FROM {_qident(table)}"
                ).fetchone()
                self.nonnull_counts[(table, name)] = nonnull
                self.distinct_counts[(table, name)] = distinct

        # Format probes over text-affinity columns (tier-independent).
        self.format_tags: dict[tuple[str, str], str] = {}
        self.format_examples: dict[tuple[str, str], str] = {}
        for table in self.tables:
            for col in self.columns[table]:
                name, declared = col[1], col[2]
                if _affinity(declared) != "TEXT":
                    continue
                probe = _distinct_values(conn, table, name, FORMAT_PROBE_VALUES)
                tag = _detect_format(probe)
                if tag:
                    self.format_tags[(table, name)] = tag
                    self.format_examples[(table, name)] = next(
                        v for v in probe if isinstance(v, str) and v
                    )


def _fk_cardinality(conn, fk: _ForeignKey) -> str:
    not_null = " AND ".join(f"{_qident(c)} IS NOT NULL" for c in fk.from_cols)
    cols = ", ".join(_qident(c) for c in fk.from_cols)
    dupes = conn.execute(
        f"SELECT COUNT(*) FROM (SELECT {cols} FROM {_qident(fk.table)} "
        f"WHERE {not_null} GROUP BY {cols} HAVING COUNT(*) > 1)"
    ).fetchone()[0]
    return "one-to-one" if dupes == 0 else "one-to-many"


def _fk_orphan_count(conn, fk: _ForeignKey) -> int:
    not_null = " AND ".join(f"c.{_qident(col)} IS NOT NULL" for col in fk.from_cols)
    join = " AND ".join(
        f"p.{_qident(to)} = c.{_qident(frm)}"
        for frm, to in zip(fk.from_cols, fk.to_cols)
    )
    return conn.execute(
        f"SELECT COUNT(*) FROM {_qident(fk.table)} c WHERE {not_null} "
        f"AND NOT EXISTS (SELECT 1 FROM {_qident(fk.ref_table)} p WHERE {join})"
    ).fetchone()[0]


def _fk_nullable(conn, fk: _ForeignKey) -> bool:
    clause = " OR ".join(f"{_qident(c)} IS NULL" for c in fk.from_cols)
    return (
        conn.execute(
            f"SELECT EXISTS (SELECT 1 FROM {_qident(fk.table)} WHERE {clause})"
        ).fetchone()[0]
        == 1
    )


def _fk_label(fk: _ForeignKey) -> str:
    frm = ", ".join(fk.from_cols)
    to = ", ".join(fk.to_cols)
    return f"{fk.table}.{frm} -> {fk.ref_table}.{to}"


def _categorical_columns(snap: _Snapshot) -> list[tuple[str, str, int]]:
    out = []
    for table in snap.tables:
        for col in snap.columns[table]:
            name = col[1]
            distinct = snap.distinct_counts[(table, name)]
            if 1 <= distinct <= CATEGORICAL_DISTINCT_MAX:
                out.append((table, name, distinct))
    return out


def _build_sections(
    conn: sqlite3.Connection, snap: _Snapshot, config: FeatureConfig, schema_ddl: str
) -> list[tuple[str, str]]:
    sections: list[tuple[str, str]] = []

    # 1. Schema DDL
    sections.append((SECTION_TITLES[0], schema_ddl or EMPTY_BODY))

    # 2. Table overview with row counts
    overview = [
        f"- {t}: {snap.row_counts[t]} rows, {len(snap.columns[t])} columns"
        for t in snap.tables
    ]
    sections.append((SECTION_TITLES[1], "\n".join(overview) or EMPTY_BODY))

    # 3. Per-column details: declared type, null fraction, sample values
    detail_lines = []
    for table in snap.tables:
        detail_lines.append(f"Table: {table}")
        rows = snap.row_counts[table]
        for col in snap.columns[table]:
            name, declared = col[1], col[2] or "untyped"
            nonnull = snap.nonnull_counts[(table, name)]
            null_part = f"{(rows - nonnull) / rows * 100:.1f}% null" if rows else "no rows"
            samples = _distinct_values(conn, table, name, config.samples_per_column)
            sample_part = (
                "samples: " + ", ".join(_fmt_value(v) for v in samples)
                if samples
                else "no non-null values"
            )
            detail_lines.append(f"  - {name} ({declared}): {null_part}; {sample_part}")
    sections.append((SECTION_TITLES[2], "\n".join(detail_lines) or EMPTY_BODY))

    # 4. Foreign-key relationship map with cardinality
    fk_lines = [
        f"- {_fk_label(fk)} ({_fk_cardinality(conn, fk)})" for fk in snap.foreign_keys
    ]
    sections.append((SECTION_TITLES[3], "\n".join(fk_lines) or EMPTY_BODY))

    # 5. Enumerated values for categorical columns
    if config.enum_value_limit == 0:
        sections.append((SECTION_TITLES[4], OMITTED_STUB))
    else:
        enum_lines = []
        for table, name, distinct in _categorical_columns(snap):
            limit = (
                distinct
                if config.enum_value_limit is None
                else min(config.enum_value_limit, distinct)
            )
            values = _distinct_values(conn, table, name, limit)
            rendered = ", ".join(_fmt_value(v, max_len=None) for v in values)
            suffix = f" (showing first {limit} of {distinct})" if limit < distinct else ""
            enum_lines.append(f"- {table}.{name} ({distinct} distinct): {rendered}{suffix}")
        sections.append((SECTION_TITLES[4], "\n".join(enum_lines) or EMPTY_BODY))

    # 6. Min/max ranges for numeric columns
    range_lines = []
    for table in snap.tables:
        for col in snap.columns[table]:
            name, declared = col[1], col[2]
            if _affinity(declared) not in ("INTEGER", "REAL", "NUMERIC"):
                continue
            lo, hi = conn.execute(
                f"SELECT MIN({_qident(name)}), MAX({_qident(name)}) FROM {_qident(table)}"
            ).fetchone()
            if lo is None and hi is None:
                continue
            range_lines.append(f"- {table}.{name}: {_fmt_value(lo)} .. {_fmt_value(hi)}")
    sections.append((SECTION_TITLES[5], "\n".join(range_lines) or EMPTY_BODY))

    # 7. Detected formats (dates, currencies, codes)
    format_lines = [
        f"- {table}.{name}: {tag} (e.g. {_fmt_value(snap.format_examples[(table, name)])})"
        for (table, name), tag in sorted(snap.format_tags.items())
    ]
    sections.append((SECTION_TITLES[6], "\n".join(format_lines) or EMPTY_BODY))

    # 8. Semantic patterns
    if config.semantic_patterns == "skip":
        sections.append((SECTION_TITLES[7], OMITTED_STUB))
    else:
        semantic_lines = []
        for fk in snap.foreign_keys:
            if fk.ref_table == fk.table:
                semantic_lines.append(
                    f"- {_fk_label(fk)}: hierarchical self-reference"
                )
        if config.semantic_patterns == "full":
            for table in snap.tables:
                temporal = [
                    col[1]
                    for col in snap.columns[table]
                    if _TEMPORAL_NAME_RE.search(col[1])
                    or str(snap.format_tags.get((table, col[1]), "")).startswith("date")
                ]
                if len(temporal) >= 2:
                    semantic_lines.append(
                        f"- {table}: temporal sequence columns {', '.join(temporal)}"
                    )
            for table in snap.tables:
                for col in snap.columns[table]:
                    name = col[1]
                    for suffix in _UNIT_SUFFIXES:
                        if name.lower().endswith(suffix):
                            semantic_lines.append(
                                f"- {table}.{name}: unit hint from suffix '{suffix}'"
                            )
                            break
        sections.append((SECTION_TITLES[7], "\n".join(semantic_lines) or EMPTY_BODY))

    # 9. Cross-table validation (orphaned foreign keys)
    if config.cross_table_validation == "skip":
        sections.append((SECTION_TITLES[8], OMITTED_STUB))
    else:
        orphan_lines = []
        for fk in snap.foreign_keys:
            orphans = _fk_orphan_count(conn, fk)
            if config.cross_table_validation == "critical" and orphans == 0:
                continue
            orphan_lines.append(f"- {_fk_label(fk)}: {orphans} orphaned rows")
        sections.append((SECTION_TITLES[8], "\n".join(orphan_lines) or EMPTY_BODY))

    # 10. Query guidance from detected features
    guidance = []
    enum_cols = _categorical_columns(snap)
    mixed_case = False
    for table, name, distinct in enum_cols:
        values = _distinct_values(conn, table, name, distinct)
        if any(isinstance(v, str) and v != v.lower() for v in values):
            mixed_case = True
            break
    if mixed_case:
        guidance.append(
            "- String comparisons are case-sensitive; match enumerated values "
            "exactly as listed in the enumerated-values section."
        )
    nullable_fks = [fk for fk in snap.foreign_keys if _fk_nullable(conn, fk)]
    if nullable_fks:
        labels = ", ".join(_fk_label(fk) for fk in nullable_fks)
        guidance.append(
            f"- Nullable foreign keys ({labels}): inner joins drop rows with "
            "NULL keys; use LEFT JOIN when unmatched rows matter."
        )
    if any(_fk_cardinality(conn, fk) == "one-to-many" for fk in snap.foreign_keys):
        guidance.append(
            "- One-to-many joins can duplicate parent rows; count with "
            "DISTINCT or aggregate in a subquery before joining."
        )
    empty_tables = [t for t in snap.tables if snap.row_counts[t] == 0]
    if empty_tables:
        guidance.append(
            f"- Empty tables ({', '.join(empty_tables)}): queries touching them "
            "return no rows."
        )
    if not guidance:
        guidance.append("- No database-specific pitfalls detected.")
    sections.append((SECTION_TITLES[9], "\n".join(guidance)))

    return sections


def _render(db_id: str, tier: SizeTier, stats: dict, sections: list[tuple[str, str]]) -> str:
    head = (
        f"# Database Analysis: {db_id}\n"
        f"Size tier: {tier.tier} ({tier.total_columns} columns, "
        f"{stats['table_count']} tables)\n"
    )
    parts = [head]
    for index, (title, body) in enumerate(sections, start=1):
        parts.append(f"## {index}. {title}\n{body}\n")
    return "\n".join(parts)


def analyze(db_path: str | Path, budget_tokens: int = DEFAULT_TOKEN_BUDGET) -> DatabaseAnalysis:
    """Produce the 10-section analysis for one SQLite database.

    The tier is classified from the total column count over base tables
    (views are not counted). If the rendered output exceeds budget_tokens,
    the feature depth degrades one tier at a time; if the Ultra depth still
    overflows, a budget error names the largest section.
    """
    path = Path(db_path)
    if not path.is_file():
        raise AnalysisError(f"no such database file: {path}")
    try:
        conn = _connect_readonly(path)
        try:
            snap = _Snapshot(conn)
            schema_ddl = extract_naive_schema(path)
            tier = classify_size(snap.total_columns)
            tier_index = TIER_ORDER.index(tier.tier)
            while True:
                effective = TIER_ORDER[tier_index]
                config = TIER_CONFIGS[effective]
                sections = _build_sections(conn, snap, config, schema_ddl)
                stats = {
                    "table_count": len(snap.tables),
                    "total_columns": snap.total_columns,
                    "foreign_key_count": len(snap.foreign_keys),
                    "row_counts": dict(snap.row_counts),
                    "effective_tier": effective,
                    "degraded": effective != tier.tier,
                }
                text = _render(path.stem, tier, stats, sections)
                token_estimate = estimate_tokens(text)
                if token_estimate <= budget_tokens:
                    return DatabaseAnalysis(
                        db_id=path.stem,
                        tier=tier,
                        sections=sections,
                        text=text,
                        token_estimate=token_estimate,
                        stats=stats,
                    )
                if tier_index < len(TIER_ORDER) - 1:
                    tier_index += 1
                    continue
                largest = max(sections, key=lambda s: len(s[1].encode("utf-8")))[0]
                raise BudgetExceededError(
                    f"analysis of {path.stem} needs {token_estimate} tokens, "
                    f"budget is {budget_tokens}; largest section: {largest}",
                    section=largest,
                )
        finally:
            conn.close()
    except sqlite3.Error as exc:
        raise AnalysisError(f"cannot analyze {path}: {exc}") from exc


@dataclass
class ToolRunResult:
    """Output of one packaged-tool invocation."""

    text: str
    fallback: bool = False
    reason: str | None = None


def run_agent_tool(
    pkg: AgentPackage, db_path: str | Path, timeout: float = DEFAULT_TOOL_TIMEOUT
) -> ToolRunResult:
    """Run a package's analysis tool in an isolated working directory.

    The tool sees a copy of the database as ./database.sqlite plus the
    package's tools/ directory, and must write its declared output file with
    exit code 0. Nonzero exit, timeout, or a missing output file falls back
    to the raw-DDL extractor with the result tagged as a fallback; if the
    fallback itself fails the (agent, database) pair is evaluation-blocked.
    """
    if pkg.execution_mode == "fallback_naive":
        return ToolRunResult(text=extract_naive_schema(db_path))

    reason = None
    workdir = Path(tempfile.mkdtemp(prefix="evosql_tool_"))
    try:
        shutil.copy(db_path, workdir / "database.sqlite")
        tools_src = pkg.root_dir / TOOLS_DIRNAME
        if tools_src.is_dir():
            shutil.copytree(tools_src, workdir / TOOLS_DIRNAME)
        (workdir / "tool_output").mkdir(exist_ok=True)
        (workdir / "output").mkdir(exist_ok=True)

        argv = shlex.split(pkg.tool_command)
        if argv and argv[0] in ("python", "python3"):
            argv[0] = sys.executable
        try:
            proc = subprocess.run(
                argv,
                cwd=workdir,
                capture_output=True,
                text=True,
                timeout=timeout,
            )
            output_file = workdir / pkg.tool_output_file
            if proc.returncode != 0:
                stderr_tail = proc.stderr.strip().splitlines()[-1] if proc.stderr.strip() else ""
                reason = f"exit code {proc.returncode}" + (f": {stderr_tail}" if stderr_tail else "")
            elif not output_file.is_file():
                reason = f"tool produced no {pkg.tool_output_file}"
            else:
                return ToolRunResult(text=output_file.read_text())
        except subprocess.TimeoutExpired:
            reason = f"timeout after {timeout:g}s"
        except OSError as exc:
            reason = f"cannot execute tool: {exc}"
    finally:
        shutil.rmtree(workdir, ignore_errors=True)

    logger.warning("tool for agent %s failed on %s (%s); using naive fallback",
                   pkg.id, db_path, reason)
    try:
        return ToolRunResult(text=extract_naive_schema(db_path), fallback=True, reason=reason)
    except AnalysisError as exc:
        raise AnalysisError(
            f"agent {pkg.id}: tool failed ({reason}) and naive fallback failed: {exc}"
        ) from exc

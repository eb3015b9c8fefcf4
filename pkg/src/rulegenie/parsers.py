"""Parsers for Sigma, Splunk, and AQL rule files.

Policy: lenient on extras, strict on requirements. Unknown keys produce
Warning diagnostics; missing required fields fail the file. Canonical text
covers only the detection logic (not titles or descriptions) so that
embeddings compare rule behavior, not naming conventions; pass
``include_metadata=True`` to fold title and description in as well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import yaml

from rulegenie.model import (
    DetectionRule,
    DuplicateId,
    RuleFormat,
    RuleGenieError,
    RuleOrigin,
    RuleSet,
    derive_rule_id,
)


class ParseError(RuleGenieError):
    pass


class MalformedDocument(ParseError):
    pass


class MissingRequiredField(ParseError):
    pass


class EmptyQuery(ParseError):
    pass


class Severity(Enum):
    WARNING = "warning"
    ERROR = "error"


@dataclass
class ParseDiagnostic:
    path: str
    severity: Severity
    message: str
    line: int | None = None
    column: int | None = None


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    format: RuleFormat
    origin: RuleOrigin


@dataclass
class IngestionManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self) -> None:
        paths = [str(e.path) for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")


def load_manifest(path: str | Path) -> IngestionManifest:
    """Read a manifest JSON file; relative entry paths resolve against it."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise MalformedDocument(f"{path}: manifest must be an object with an 'entries' list")
    entries = []
    for raw in data["entries"]:
        try:
            fmt = RuleFormat(raw["format"])
            origin = RuleOrigin(raw["origin"])
            entry_path = Path(raw["path"])
        except (KeyError, ValueError, TypeError) as exc:
            raise MalformedDocument(f"{path}: bad manifest entry {raw!r}: {exc}") from exc
        if not entry_path.is_absolute():
            entry_path = path.parent / entry_path
        entries.append(ManifestEntry(path=entry_path, format=fmt, origin=origin))
    return IngestionManifest(entries=entries)


def _normalize_ws(text: str) -> str:
    """Collapse whitespace runs to single spaces; idempotent."""
    return " ".join(text.split())


def _warn(diagnostics: list[ParseDiagnostic] | None, path: str, message: str) -> None:
    if diagnostics is not None:
        diagnostics.append(
            ParseDiagnostic(path=path, severity=Severity.WARNING, message=message)
        )


def _load_yaml_mapping(document: str, what: str) -> dict:
    try:
        data = yaml.safe_load(document)
    except yaml.YAMLError as exc:
        raise MalformedDocument(f"invalid YAML in {what}: {exc}") from exc
    if not isinstance(data, dict):
        raise MalformedDocument(f"{what} must be a single YAML mapping")
    return data


def _with_metadata(canonical: str, title: str, description: str, include: bool) -> str:
    if not include:
        return canonical
    parts = [p for p in (title, description) if p]
    return _normalize_ws(" ".join(parts + [canonical]))


_SIGMA_KNOWN_KEYS = {
    "title", "id", "name", "status", "description", "references", "author",
    "date", "modified", "tags", "logsource", "detection", "condition",
    "falsepositives", "level", "fields", "related", "license", "scope",
}

_SPLUNK_KNOWN_KEYS = {
    "name", "id", "version", "date", "author", "status", "type", "description",
    "data_source", "search", "how_to_implement", "known_false_positives",
    "references", "tags", "security_domain", "asset_type", "confidence",
    "impact", "risk_score", "mitre_attack_id", "drilldown_searches", "rba",
    "platform", "product",
}


def parse_sigma(
    document: str,
    origin: RuleOrigin = RuleOrigin.EXISTING,
    diagnostics: list[ParseDiagnostic] | None = None,
    path: str = "<sigma>",
    include_metadata: bool = False,
) -> DetectionRule:
    """Parse one Sigma YAML document.

    Canonical text is the detection block (with its condition), re-serialized
    as JSON with sorted keys, then whitespace-normalized: two key-reordered
    copies of the same rule canonicalize identically.
    """
    data = _load_yaml_mapping(document, "Sigma rule")
    detection = data.get("detection")
    if detection is None:
        raise MissingRequiredField("Sigma rule has no 'detection' block")
    if not isinstance(detection, dict):
        raise MalformedDocument("'detection' must be a mapping")
    detection = dict(detection)
    if "condition" not in detection:
        if "condition" in data:
            detection["condition"] = data["condition"]
        else:
            raise MissingRequiredField("Sigma rule has no 'condition'")

    for key in sorted(set(data) - _SIGMA_KNOWN_KEYS):
        _warn(diagnostics, path, f"unknown Sigma key {key!r} ignored")

    logsource = data.get("logsource") or {}
    platform = ""
    if isinstance(logsource, dict):
        platform = str(logsource.get("product") or logsource.get("category") or "")

    title = str(data.get("title") or "")
    description = str(data.get("description") or "")
    tags = tuple(str(t) for t in data.get("tags") or [])
    canonical = _normalize_ws(
        json.dumps(detection, sort_keys=True, ensure_ascii=False, default=str)
    )
    return DetectionRule(
        id=str(data.get("id") or derive_rule_id(document)),
        format=RuleFormat.SIGMA,
        title=title,
        description=description,
        raw_text=document,
        canonical_text=_with_metadata(canonical, title, description, include_metadata),
        platform=platform,
        tags=tags,
        origin=origin,
    )


def parse_splunk(
    document: str,
    origin: RuleOrigin = RuleOrigin.EXISTING,
    diagnostics: list[ParseDiagnostic] | None = None,
    path: str = "<splunk>",
    include_metadata: bool = False,
) -> DetectionRule:
    """Parse one Splunk detection YAML document.

    Canonical text is the SPL ``search`` string with line continuations
    joined and whitespace runs collapsed to single spaces.
    """
    data = _load_yaml_mapping(document, "Splunk detection")
    search = data.get("search")
    if not isinstance(search, str) or not search.strip():
        raise MissingRequiredField("Splunk detection has no non-empty 'search'")

    for key in sorted(set(data) - _SPLUNK_KNOWN_KEYS):
        _warn(diagnostics, path, f"unknown Splunk key {key!r} ignored")

    platform = str(data.get("platform") or data.get("product") or "")
    if not platform:
        data_source = data.get("data_source")
        if isinstance(data_source, list) and data_source:
            data_source = data_source[0]
        if isinstance(data_source, str) and data_source.split():
            platform = data_source.split()[0].lower()

    raw_tags = data.get("tags")
    if isinstance(raw_tags, list):
        tags = tuple(str(t) for t in raw_tags)
    elif isinstance(raw_tags, dict):
        tags = tuple(sorted(str(k) for k in raw_tags))
    else:
        tags = ()

    title = str(data.get("name") or "")
    description = str(data.get("description") or "")
    canonical = _normalize_ws(search)
    return DetectionRule(
        id=str(data.get("id") or derive_rule_id(document)),
        format=RuleFormat.SPLUNK,
        title=title,
        description=description,
        raw_text=document,
        canonical_text=_with_metadata(canonical, title, description, include_metadata),
        platform=platform,
        tags=tags,
        origin=origin,
    )


_AQL_ANNOTATION_KEYS = {"title", "id", "platform", "description"}


def parse_aql(
    document: str,
    origin: RuleOrigin = RuleOrigin.EXISTING,
    diagnostics: list[ParseDiagnostic] | None = None,
    path: str = "<aql>",
    include_metadata: bool = False,
) -> DetectionRule:
    """Parse one AQL query file.

    Leading ``--`` comment lines may carry ``title:``, ``id:``, ``platform:``
    annotations; the rest of the file is the statement, whitespace-normalized
    with keyword case preserved. Missing annotations fall back to an empty
    title/platform and a content-hash id.
    """
    annotations: dict[str, str] = {}
    query_lines: list[str] = []
    in_header = True
    for line in document.splitlines():
        stripped = line.strip()
        if stripped.startswith("--"):
            comment = stripped[2:].strip()
            if in_header and ":" in comment:
                key, _, value = comment.partition(":")
                key = key.strip().lower()
                if key in _AQL_ANNOTATION_KEYS:
                    annotations[key] = value.strip()
                elif key.isidentifier():
                    _warn(diagnostics, path, f"unknown AQL annotation {key!r} ignored")
            continue
        if stripped:
            in_header = False
        query_lines.append(line)

    canonical = _normalize_ws("\n".join(query_lines))
    if not canonical:
        raise EmptyQuery("AQL file contains no query statement")

    title = annotations.get("title", "")
    description = annotations.get("description", "")
    return DetectionRule(
        id=annotations.get("id") or derive_rule_id(document),
        format=RuleFormat.AQL,
        title=title,
        description=description,
        raw_text=document,
        canonical_text=_with_metadata(canonical, title, description, include_metadata),
        platform=annotations.get("platform", ""),
        tags=(),
        origin=origin,
    )


_PARSERS = {
    RuleFormat.SIGMA: parse_sigma,
    RuleFormat.SPLUNK: parse_splunk,
    RuleFormat.AQL: parse_aql,
}


def parse_document(
    document: str,
    fmt: RuleFormat,
    origin: RuleOrigin = RuleOrigin.EXISTING,
    diagnostics: list[ParseDiagnostic] | None = None,
    path: str = "<document>",
    include_metadata: bool = False,
) -> DetectionRule:
    """Dispatch to the parser for ``fmt``."""
    return _PARSERS[fmt](
        document,
        origin=origin,
        diagnostics=diagnostics,
        path=path,
        include_metadata=include_metadata,
    )


def ingest(
    manifest: IngestionManifest,
    include_metadata: bool = False,
) -> tuple[RuleSet, list[ParseDiagnostic]]:
    """Parse every manifest entry into one RuleSet.

    Per-file failures (unreadable, malformed, duplicate id) become Error
    diagnostics rather than aborting; the result is deterministic for
    identical inputs.
    """
    if not manifest.entries:
        raise ValueError("manifest is empty")
    rule_set = RuleSet()
    diagnostics: list[ParseDiagnostic] = []
    for entry in manifest.entries:
        path_str = str(entry.path)
        try:
            document = entry.path.read_text(encoding="utf-8")
        except OSError as exc:
            diagnostics.append(
                ParseDiagnostic(path=path_str, severity=Severity.ERROR, message=str(exc))
            )
            continue
        try:
            rule = parse_document(
                document,
                entry.format,
                origin=entry.origin,
                diagnostics=diagnostics,
                path=path_str,
                include_metadata=include_metadata,
            )
            rule_set.add_rule(rule)
        except (ParseError, DuplicateId) as exc:
            line = col = None
            mark = getattr(getattr(exc, "__cause__", None), "problem_mark", None)
            if mark is not None:
                line, col = mark.line + 1, mark.column + 1
            diagnostics.append(
                ParseDiagnostic(
                    path=path_str,
                    severity=Severity.ERROR,
                    message=f"{type(exc).__name__}: {exc}",
                    line=line,
                    column=col,
                )
            )
    return rule_set, diagnostics

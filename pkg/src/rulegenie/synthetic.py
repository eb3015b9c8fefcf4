"""Seeded synthetic rule corpus with planted redundant pairs.

The generator produces a mixed Sigma/Splunk/AQL library plus a ground-truth
listing of planted near-duplicate pairs. Each plant applies one benign
transform to a base rule:

- superset: the variant adds detection terms, so it strictly covers the
  base (expected action keep_superior);
- rename: one identifier is renamed, logic unchanged (expected keep_both);
- platform: metadata binds the variant to a different platform while the
  detection text is identical (expected keep_both);
- reorder: keys or whitespace are shuffled with identical canonical text
  (expected keep_both).

Expected actions mirror the token-set superiority definitions used by the
deterministic mock analyst, which is what makes the corpus a mechanical
check of the whole funnel rather than a benchmark of model judgment.

Two measures keep unplanted pairs below the semantic gate: every base rule
carries three corpus-unique marker tokens (inherited by its variant, so
plants stay near-identical), and the per-format trigger combinations are
sampled without replacement so no two bases share their full core logic.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path

import yaml

from rulegenie.model import RuleOrigin, RuleSet
from rulegenie.parsers import RuleFormat, parse_document

DEFAULT_SEED = 20240917
DEFAULT_RULES = 300
DEFAULT_PLANTS = 40

_PROCESSES = [
    "mshta", "rundll32", "regsvr32", "certutil", "bitsadmin", "wscript",
    "cscript", "powershell", "cmd", "wmic", "schtasks", "reg", "netsh",
    "curl", "wget", "ssh", "scp", "nc", "python", "perl", "bash", "osascript",
    "launchctl", "crontab", "systemctl", "kubectl", "dockerd", "svchost",
    "lsass", "winword", "excel", "outlook", "chrome", "firefox", "java",
    "node", "php", "ruby", "tar", "zip",
]
_FLAGS = [
    "encodedcommand", "downloadstring", "bypass", "hidden", "noprofile",
    "urlcache", "decode", "transfer", "create", "delete", "query", "export",
    "import", "dump", "inject", "exec", "keygen", "listen", "reverse",
    "tunnel", "proxy", "admin", "system", "root", "shadow", "backup",
]
# Tokens reserved for superset plants; never used in base rules so the
# variant token set strictly contains the base token set.
_SPARE_TERMS = [
    "telemetrygap", "huntlead", "betasignal", "canaryterm", "driftmarker",
    "tripline", "decoyflag", "watchword", "sentinelbit", "tracermark",
]
_EVENT_IDS = [1, 3, 7, 8, 10, 11, 13, 22, 4104, 4624, 4625, 4688, 4697, 5140]
_SIGMA_PRODUCTS = ["windows", "linux", "macos"]
_SIGMA_CATEGORIES = ["process_creation", "network_connection", "registry_set", "file_event"]
_SPLUNK_SOURCES = ["Sysmon EventID 1", "Windows Security 4688", "CrowdStrike ProcessRollup2"]
_AQL_DEVICES = ["WindowsAuthServer", "LinuxServer", "FirewallGateway", "ProxyServer"]
_AQL_FIELDS = ["Process Name", "Command", "Image Path", "Parent Process"]

_RESAMPLE_ATTEMPTS = 200


@dataclass(frozen=True)
class TruthRow:
    pair_id_a: str
    pair_id_b: str
    expected_action: str


@dataclass
class _Recipe:
    format: RuleFormat
    parts: dict

    def render(self) -> str:
        if self.format is RuleFormat.AQL:
            p = self.parts
            lines = [
                f"-- title: {p['title']}",
                f"-- id: {p['id']}",
                f"-- platform: {p['platform']}",
                p["statement"],
            ]
            return "\n".join(lines) + "\n"
        return yaml.safe_dump(self.parts, sort_keys=False, width=200)


def _markers(idx: int) -> tuple[str, str, str]:
    return (f"case{idx:04d}", f"zone{idx:04d}", f"mark{idx:04d}")


def _draw(rng: random.Random, used: set, fresh) -> tuple:
    """Draw a core-combo signature not seen before; determinism preserved."""
    for _ in range(_RESAMPLE_ATTEMPTS):
        combo = fresh()
        if combo not in used:
            used.add(combo)
            return combo
    raise ValueError("cannot sample enough distinct rule cores; corpus too large")


def _sigma_recipe(rng: random.Random, idx: int, used: set) -> _Recipe:
    proc, flags = _draw(
        rng, used, lambda: (rng.choice(_PROCESSES), tuple(sorted(rng.sample(_FLAGS, k=3))))
    )
    case, zone, mark = _markers(idx)
    parts = {
        "title": f"Suspicious {proc} activity {idx}",
        "id": f"synth-{idx:04d}",
        "status": "experimental",
        "description": f"Detects abnormal use of {proc} with {flags[0]} options.",
        "logsource": {
            "product": rng.choice(_SIGMA_PRODUCTS),
            "category": rng.choice(_SIGMA_CATEGORIES),
        },
        "detection": {
            "selection": {
                "Image|endswith": f"\\{proc}.exe",
                "CommandLine|contains": [f"-{f}" for f in flags],
                "Marker|contains": [case, zone, mark],
            },
            "condition": "selection",
        },
        "level": rng.choice(["medium", "high"]),
    }
    return _Recipe(format=RuleFormat.SIGMA, parts=parts)


def _splunk_recipe(rng: random.Random, idx: int, used: set) -> _Recipe:
    proc, flag = _draw(
        rng, used, lambda: (rng.choice(_PROCESSES), rng.choice(_FLAGS))
    )
    event = rng.choice(_EVENT_IDS)
    case, zone, mark = _markers(idx)
    parts = {
        "name": f"{proc.title()} {flag.title()} Usage {idx}",
        "id": f"synth-{idx:04d}",
        "description": f"Flags {proc} launched with {flag} arguments.",
        "data_source": [rng.choice(_SPLUNK_SOURCES)],
        "search": (
            f"index=endpoint sourcetype=XmlWinEventLog EventCode={event} "
            f"Image=*\\\\{proc}.exe CommandLine=*{flag}* "
            f"case_tag={case} zone_tag={zone} mark_tag={mark} "
            f"| stats count min(_time) as firstTime by dest user"
        ),
        "tags": {"analytic_story": ["living off the land"]},
    }
    return _Recipe(format=RuleFormat.SPLUNK, parts=parts)


def _aql_recipe(rng: random.Random, idx: int, used: set) -> _Recipe:
    device, field, proc = _draw(
        rng,
        used,
        lambda: (rng.choice(_AQL_DEVICES), rng.choice(_AQL_FIELDS), rng.choice(_PROCESSES)),
    )
    case, zone, mark = _markers(idx)
    parts = {
        "title": f"{proc} anomaly watch {idx}",
        "id": f"synth-{idx:04d}",
        "platform": device.lower(),
        "statement": (
            f"SELECT sourceip, destinationip, \"{field}\" FROM events "
            f"WHERE LOGSOURCETYPENAME(devicetype) = '{device}' "
            f"AND \"{field}\" ILIKE '%{proc}%' "
            f"AND casetag = '{case}' AND zonetag = '{zone}' AND marktag = '{mark}' "
            f"LAST 24 HOURS"
        ),
    }
    return _Recipe(format=RuleFormat.AQL, parts=parts)


def _base_recipe(rng: random.Random, idx: int, used: dict) -> _Recipe:
    roll = rng.random()
    if roll < 0.6:
        return _sigma_recipe(rng, idx, used["sigma"])
    if roll < 0.85:
        return _splunk_recipe(rng, idx, used["splunk"])
    return _aql_recipe(rng, idx, used["aql"])


def _variant(rng: random.Random, base: _Recipe, transform: str, idx: int) -> _Recipe:
    parts = json.loads(json.dumps(base.parts))
    parts["id"] = f"synth-{idx:04d}v"
    fmt = base.format
    if fmt is RuleFormat.SIGMA:
        parts["title"] += " variant"
        if transform == "superset":
            parts["detection"]["selection"]["CommandLine|contains"].append(
                f"-{rng.choice(_SPARE_TERMS)}"
            )
        elif transform == "rename":
            selection = parts["detection"].pop("selection")
            parts["detection"] = {"selection_main": selection, "condition": "selection_main"}
        elif transform == "platform":
            products = [p for p in _SIGMA_PRODUCTS if p != parts["logsource"]["product"]]
            parts["logsource"]["product"] = rng.choice(products)
        else:
            detection = parts["detection"]
            parts["detection"] = dict(reversed(list(detection.items())))
    elif fmt is RuleFormat.SPLUNK:
        parts["name"] += " Variant"
        if transform == "superset":
            parts["search"] += f" {rng.choice(_SPARE_TERMS)}=true"
        elif transform == "rename":
            parts["search"] = parts["search"].replace("by dest user", "by dst user")
        elif transform == "platform":
            sources = [s for s in _SPLUNK_SOURCES if s != parts["data_source"][0]]
            parts["data_source"] = [rng.choice(sources)]
        else:
            parts["search"] = parts["search"].replace(" | stats", "\n| stats")
    else:
        parts["title"] += " variant"
        if transform == "superset":
            parts["statement"] = parts["statement"].replace(
                " LAST 24 HOURS",
                f" AND username ILIKE '%{rng.choice(_SPARE_TERMS)}%' LAST 24 HOURS",
            )
        elif transform == "rename":
            parts["statement"] = parts["statement"].replace("sourceip", "source_ip")
        elif transform == "platform":
            devices = [d for d in _AQL_DEVICES if d.lower() != parts["platform"]]
            parts["platform"] = rng.choice(devices).lower()
        else:
            parts["statement"] = parts["statement"].replace(" FROM ", "  FROM\n  ")
    return _Recipe(format=fmt, parts=parts)


_TRANSFORMS = ["superset", "rename", "platform", "reorder"]
_EXPECTED = {
    "superset": "keep_superior",
    "rename": "keep_both",
    "platform": "keep_both",
    "reorder": "keep_both",
}


def _build(
    seed: int, n_rules: int, n_plants: int
) -> tuple[list[_Recipe], list[tuple[_Recipe, _Recipe, str]]]:
    """Deterministic recipe construction shared by generate and write_corpus."""
    if n_plants * 2 > n_rules:
        raise ValueError("corpus too small for the requested plant count")
    rng = random.Random(seed)
    used: dict = {"sigma": set(), "splunk": set(), "aql": set()}
    n_bases = n_rules - n_plants
    recipes = [_base_recipe(rng, i, used) for i in range(n_bases)]
    plants = []
    for plant_idx in range(n_plants):
        base = recipes[plant_idx]
        transform = _TRANSFORMS[plant_idx % len(_TRANSFORMS)]
        plants.append((base, _variant(rng, base, transform, plant_idx), transform))
    return recipes, plants


def generate(
    seed: int = DEFAULT_SEED,
    n_rules: int = DEFAULT_RULES,
    n_plants: int = DEFAULT_PLANTS,
    variant_origin: RuleOrigin = RuleOrigin.EXISTING,
) -> tuple[RuleSet, list[TruthRow]]:
    """Build the corpus in memory; same seed, same corpus."""
    recipes, plants = _build(seed, n_rules, n_plants)
    rule_set = RuleSet()
    truth: list[TruthRow] = []
    for recipe in recipes:
        rule_set.add_rule(
            parse_document(recipe.render(), recipe.format, origin=RuleOrigin.EXISTING)
        )
    for base, variant, transform in plants:
        rule = parse_document(variant.render(), variant.format, origin=variant_origin)
        rule_set.add_rule(rule)
        truth.append(
            TruthRow(
                pair_id_a=base.parts["id"],
                pair_id_b=rule.id,
                expected_action=_EXPECTED[transform],
            )
        )
    return rule_set, truth


def write_corpus(
    out_dir: str | Path,
    seed: int = DEFAULT_SEED,
    n_rules: int = DEFAULT_RULES,
    n_plants: int = DEFAULT_PLANTS,
    variant_origin: RuleOrigin = RuleOrigin.EXISTING,
) -> tuple[Path, Path]:
    """Write rule files, a manifest, and truth.csv; returns (manifest, truth)."""
    out_dir = Path(out_dir)
    rules_dir = out_dir / "rules"
    rules_dir.mkdir(parents=True, exist_ok=True)
    recipes, plants = _build(seed, n_rules, n_plants)
    entries = []
    truth_rows: list[TruthRow] = []

    def emit(recipe: _Recipe, name: str, origin: RuleOrigin) -> str:
        suffix = {"sigma": ".yml", "splunk": ".yml", "aql": ".aql"}[recipe.format.value]
        path = rules_dir / f"{name}{suffix}"
        path.write_text(recipe.render(), encoding="utf-8")
        entries.append(
            {
                "path": str(path.relative_to(out_dir)),
                "format": recipe.format.value,
                "origin": origin.value,
            }
        )
        return recipe.parts["id"]

    for i, recipe in enumerate(recipes):
        emit(recipe, f"base-{i:04d}", RuleOrigin.EXISTING)
    for plant_idx, (base, variant, transform) in enumerate(plants):
        variant_id = emit(variant, f"plant-{plant_idx:04d}", variant_origin)
        truth_rows.append(
            TruthRow(
                pair_id_a=base.parts["id"],
                pair_id_b=variant_id,
                expected_action=_EXPECTED[transform],
            )
        )

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps({"entries": entries}, indent=2) + "\n", encoding="utf-8"
    )
    truth_path = out_dir / "truth.csv"
    with open(truth_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair_id_a", "pair_id_b", "expected_action"])
        for row in truth_rows:
            writer.writerow([row.pair_id_a, row.pair_id_b, row.expected_action])
    return manifest_path, truth_path

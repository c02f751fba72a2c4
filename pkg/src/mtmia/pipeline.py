"""End-to-end audit orchestration behind the command-line interface.

Stage order enforces the no-box contract: the synthetic release is read,
encoded and used to train the encoder before any real (train or holdout)
file is opened.
"""
from __future__ import annotations

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .attacks import RAW_ROW, AttackScoreSet, baseline_entity_score, child_table_score, concat_scores, mtmia_score
from .datagen import ToySpec, gen_toy, mock_independent_generator, mock_memorizing_generator
from .errors import ConfigError, DataError
from .evalkit import fidelity_report, roc_and_auc, write_json_report
from .featenc import apply_encoding, fit_encoding
from .hgnn import SPACES, EncoderConfig, EncoderParams, embed, train_encoder
from .relgraph import RelationalSchema, build_graph, decompose_entities, read_database, write_database

log = logging.getLogger(__name__)

ATTACKS = ("mtmia", "dcr", "mc", "kde")
DECOMPOSE_ROWS = (("vanilla", "dcr", RAW_ROW), ("z_parent", "mtmia", "parent"),
                  ("z_context", "mtmia", "context"), ("z_final", "mtmia", "final"))
METRIC_COLUMNS = ("AUC", "TPR@0", "TPR@1e-3", "TPR@1e-2")


@dataclass(frozen=True)
class AttackSpec:
    name: str
    spaces: tuple = ()
    target: str | None = None  # child table for row-level baselines
    options: dict = field(default_factory=dict, hash=False)

    @classmethod
    def from_dict(cls, doc) -> "AttackSpec":
        if isinstance(doc, str):
            doc = {"name": doc}
        name = doc.get("name")
        if name not in ATTACKS:
            raise ConfigError(f"unknown attack {name!r}; expected one of {ATTACKS}")
        spaces = tuple(doc.get("spaces") or (("final",) if name == "mtmia" else (RAW_ROW,)))
        allowed = SPACES if name == "mtmia" else (RAW_ROW,)
        for s in spaces:
            if s not in allowed:
                raise ConfigError(f"attack {name!r} does not support space {s!r}")
        target = doc.get("target")
        if target is not None and name == "mtmia":
            raise ConfigError("mtmia scores whole entities; 'target' applies to baselines only")
        return cls(name, spaces, target, dict(doc.get("options", {})))

    def to_dict(self) -> dict:
        return {"name": self.name, "spaces": list(self.spaces), "target": self.target, "options": self.options}


@dataclass(frozen=True)
class AuditConfig:
    schema: Path
    train_dir: Path
    holdout_dir: Path
    synth_dir: Path
    output_dir: Path
    encoder: EncoderConfig = EncoderConfig()
    attacks: tuple = (AttackSpec("mtmia", ("final",)),)
    fidelity: bool = True
    seed: int = 0
    checkpoint: Path | None = None

    def __post_init__(self):
        if not self.attacks:
            raise ConfigError("attack list is empty")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "AuditConfig":
        base = Path(base_dir)
        known = {"schema", "train_dir", "holdout_dir", "synth_dir", "output_dir", "encoder", "attacks",
                 "fidelity", "seed", "checkpoint"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            paths = {k: base / doc[k] for k in ("schema", "train_dir", "holdout_dir", "synth_dir", "output_dir")}
        except KeyError as exc:
            raise ConfigError(f"config is missing {exc.args[0]!r}") from exc
        seed = int(doc.get("seed", 0))
        enc = dict(doc.get("encoder", {}))
        enc["seed"] = seed
        return cls(
            **paths,
            encoder=EncoderConfig.from_dict(enc),
            attacks=tuple(AttackSpec.from_dict(a) for a in doc.get("attacks", ["mtmia"])),
            fidelity=bool(doc.get("fidelity", True)),
            seed=seed,
            checkpoint=base / doc["checkpoint"] if doc.get("checkpoint") else None,
        )

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "AuditConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for k, v in (overrides or {}).items():
            if v is None:
                continue
            if k.startswith("encoder."):
                doc.setdefault("encoder", {})[k.split(".", 1)[1]] = v
            else:
                doc[k] = v
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "schema": str(self.schema),
            "train_dir": str(self.train_dir),
            "holdout_dir": str(self.holdout_dir),
            "synth_dir": str(self.synth_dir),
            "output_dir": str(self.output_dir),
            "encoder": asdict(self.encoder),
            "attacks": [a.to_dict() for a in self.attacks],
            "fidelity": self.fidelity,
            "seed": self.seed,
            "checkpoint": None if self.checkpoint is None else str(self.checkpoint),
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def check_paths(self) -> None:
        for p in (self.schema, self.train_dir, self.holdout_dir, self.synth_dir):
            if not p.exists():
                raise ConfigError(f"path does not exist: {p}")
        if self.checkpoint is not None and not self.checkpoint.exists():
            raise ConfigError(f"checkpoint does not exist: {self.checkpoint}")


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages = []

    def emit(self, record):
        self.messages.append(record.getMessage())


@dataclass
class _Side:
    db: object
    graph: object
    entities: list
    report: dict


def _prepare(schema, db, enc) -> _Side:
    feats, report = apply_encoding(enc, db)
    graph = build_graph(schema, db, feats)
    return _Side(db, graph, decompose_entities(graph), report)


def _file_tag(attack: str, space: str) -> str:
    return f"{attack}_{space}".replace(":", "-").replace("/", "-")


def _score(spec: AttackSpec, space: str, queries, synth: _Side, params, synth_emb) -> AttackScoreSet:
    if spec.name == "mtmia":
        return mtmia_score(params, queries, synth.entities, space, synth_emb)
    if spec.target is not None:
        return child_table_score(spec.name, queries, synth.graph, spec.target, **spec.options)
    return baseline_entity_score(spec.name, queries, synth.entities, **spec.options)


def _metric_row(report) -> dict:
    t = report.tpr_at_fpr
    return {"AUC": report.auc, "TPR@0": t[0.0], "TPR@1e-3": t[1e-3], "TPR@1e-2": t[1e-2]}


def run_audit(config: AuditConfig) -> dict:
    """Run the full pipeline and write reports into ``config.output_dir``.

    Returns ``{"reports": {(attack, space): EvalReport}, "fidelity": ...,
    "manifest": {...}}``.
    """
    collector = _WarningCollector()
    root_log = logging.getLogger("mtmia")
    root_log.addHandler(collector)
    try:
        return _run_audit(config, collector)
    finally:
        root_log.removeHandler(collector)


def _run_audit(config: AuditConfig, collector) -> dict:
    config.check_paths()
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    schema = RelationalSchema.load(config.schema)

    # synthetic release only, until the encoder is fixed
    synth_db = read_database(schema, config.synth_dir)
    enc = fit_encoding(schema, synth_db)
    synth = _prepare(schema, synth_db, enc)
    if not synth.entities:
        raise DataError("synthetic release contains no entities")

    params, history = None, None
    if any(a.name == "mtmia" for a in config.attacks):
        if config.checkpoint is not None:
            params = EncoderParams.load(config.checkpoint, schema)
        else:
            params, history = train_encoder(config.encoder, synth.entities, schema)
            params.save(out / "encoder.json")

    train_db = read_database(schema, config.train_dir)
    holdout_db = read_database(schema, config.holdout_dir)
    train = _prepare(schema, train_db, enc)
    holdout = _prepare(schema, holdout_db, enc)
    n_pos, n_neg = len(train.entities), len(holdout.entities)
    if n_pos == 0 or n_neg == 0:
        raise DataError(f"need members and nonmembers, got {n_pos} and {n_neg}")
    if n_pos != n_neg:
        log.warning("evaluation set is imbalanced: %d members vs %d holdout entities", n_pos, n_neg)

    synth_emb = embed(params, synth.entities) if params is not None else None
    reports, files = {}, []
    for spec in config.attacks:
        for space in spec.spaces:
            parts = [
                _score(spec, space, side.entities, synth, params, synth_emb).with_labels(np.full(len(side.entities), lab))
                for side, lab in ((train, 1), (holdout, 0))
            ]
            if set(parts[0].ids) & set(parts[1].ids):
                for p, tag in zip(parts, ("train", "holdout")):
                    p.ids = [f"{tag}:{i}" for i in p.ids]
            scores = concat_scores(parts)
            space_tag = space if spec.target is None else f"child-{spec.target}"
            report = roc_and_auc(scores)
            tag = _file_tag(spec.name, space_tag)
            doc = {"attack": spec.name, "space": space_tag, **report.to_dict()}
            if spec.target is not None:
                # child rows are reduced to one entity score by max
                doc["row_reduction"] = "max"
            write_json_report(out / f"report_{tag}.json", doc)
            scores.space = space_tag
            scores.to_csv(out / f"scores_{tag}.csv")
            report.write_roc_csv(out / f"roc_{tag}.csv")
            files += [f"report_{tag}.json", f"scores_{tag}.csv", f"roc_{tag}.csv"]
            reports[(spec.name, space_tag)] = report

    fid = None
    if config.fidelity:
        fid = fidelity_report(schema, train_db, train.graph, synth_db, synth.graph)
        write_json_report(out / "fidelity.json", fid.to_dict())
        files.append("fidelity.json")

    write_json_report(out / "ingestion.json", {"synth": synth.report, "train": train.report, "holdout": holdout.report})
    files.append("ingestion.json")
    manifest = {
        "seed": config.seed,
        "config": config.to_dict(),
        "config_sha256": config.digest(),
        "schema_sha256": schema.fingerprint(),
        "versions": {"mtmia": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "kernel_backend": _kernels.BACKEND,
        "counts": {"members": n_pos, "nonmembers": n_neg, "synthetic": len(synth.entities)},
        "encoder_trained": history is not None,
        "loss_history": history,
        "warnings": collector.messages,
        "files": sorted(files),
    }
    write_json_report(out / "manifest.json", manifest)
    return {"reports": reports, "fidelity": fid, "manifest": manifest}


def run_decompose_attack(config: AuditConfig) -> dict:
    """DCR in raw parent-row space and in each embedding space (4 rows x 4 metrics)."""
    cfg = replace(
        config,
        attacks=(AttackSpec("dcr", (RAW_ROW,)), AttackSpec("mtmia", ("parent", "context", "final"))),
        fidelity=False,
    )
    res = run_audit(cfg)
    table = {row: _metric_row(res["reports"][(attack, space)]) for row, attack, space in DECOMPOSE_ROWS}
    out = config.output_dir
    with open(out / "decompose_table.csv", "w", encoding="utf-8") as fh:
        fh.write("embedding," + ",".join(METRIC_COLUMNS) + "\n")
        for row, metrics in table.items():
            fh.write(row + "," + ",".join(repr(float(metrics[c])) for c in METRIC_COLUMNS) + "\n")
    write_json_report(out / "decompose_table.json", table)
    return table


def run_fidelity(config: AuditConfig):
    schema = RelationalSchema.load(config.schema)
    synth_db = read_database(schema, config.synth_dir)
    real_db = read_database(schema, config.train_dir)
    sg = build_graph(schema, synth_db)
    rg = build_graph(schema, real_db)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    rep = fidelity_report(schema, real_db, rg, synth_db, sg)
    write_json_report(config.output_dir / "fidelity.json", rep.to_dict())
    return rep


def run_toy(out_dir, spec: ToySpec = ToySpec(), generator: str = "memorizing", noise: float = 1.0,
            synth_seed: int | None = None, encoder: dict | None = None) -> Path:
    """Write schema, train/holdout/synth CSVs and an audit config ``toy.json``."""
    out = Path(out_dir)
    train, holdout, schema = gen_toy(spec)
    seed = spec.seed + 1 if synth_seed is None else synth_seed
    if generator == "memorizing":
        synth = mock_memorizing_generator(schema, train, noise, seed=seed)
    elif generator == "independent":
        synth = mock_independent_generator(schema, train, seed=seed)
    else:
        raise ConfigError(f"unknown generator {generator!r}")
    out.mkdir(parents=True, exist_ok=True)
    schema.save(out / "schema.json")
    for name, db in (("train", train), ("holdout", holdout), ("synth", synth)):
        write_database(schema, db, out / name)
    cfg = {
        "schema": "schema.json",
        "train_dir": "train",
        "holdout_dir": "holdout",
        "synth_dir": "synth",
        "output_dir": "report",
        "encoder": encoder or {},
        "attacks": [
            {"name": "mtmia", "spaces": ["final", "parent", "context"]},
            {"name": "dcr"}, {"name": "mc"}, {"name": "kde"},
        ],
        "fidelity": True,
        "seed": spec.seed,
    }
    (out / "toy.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return out / "toy.json"

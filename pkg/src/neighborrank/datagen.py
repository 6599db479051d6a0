"""Synthetic session logs with a known context-dependent click model.

Stands in for production interaction logs. A hidden ground-truth model drives
clicks: each item has a latent quality, users have per-category affinities,
positions carry a strictly decreasing bias, and same-category items earlier in
the list cannibalize clicks. The cannibalization term makes the best ordering
depend on list composition, so sorting by quality alone is measurably
suboptimal and reranking has headroom.

Datasets are written as JSONL (one record per line) with a sidecar manifest
carrying the schema version and the 9:1 train/test split point. Latent
quality never leaves this module: serialized records contain only ids and
labels.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import RngStream

SCHEMA_VERSION = 1
MANIFEST_SUFFIX = ".manifest.json"


class DatasetError(ValueError):
    pass


@dataclass
class Catalog:
    """Item universe: parallel arrays indexed by item id."""

    category: np.ndarray
    brand: np.ndarray
    quality: np.ndarray
    num_categories: int
    num_brands: int

    @property
    def num_items(self) -> int:
        return len(self.category)

    def feature_ids(self, item_ids: np.ndarray) -> np.ndarray:
        """(..., 3) int array of [item, category, brand] ids."""
        item_ids = np.asarray(item_ids)
        return np.stack(
            [item_ids, self.category[item_ids], self.brand[item_ids]], axis=-1
        ).astype(np.int64)


def gen_catalog(seed: int, num_items: int, num_categories: int, num_brands: int = 12) -> Catalog:
    if not (num_items >= num_categories >= 1):
        raise ValueError(f"need num_items >= num_categories >= 1, got {num_items} < {num_categories}")
    rs = RngStream(seed).split("catalog")
    category = rs.split("category").integers(0, num_categories, (num_items,))
    brand = rs.split("brand").integers(0, max(1, num_brands), (num_items,))
    quality = rs.split("quality").normal((num_items,))
    return Catalog(category=category, brand=brand, quality=quality,
                   num_categories=num_categories, num_brands=max(1, num_brands))


@dataclass
class GroundTruthModel:
    """Hidden click/conversion oracle used only by the simulator and tests."""

    catalog: Catalog
    position_bias: np.ndarray          # strictly decreasing over positions
    affinity_sigma: float
    cannibalization: float             # penalty per earlier same-category item
    conversion_scale: float
    conversion_intercept: float
    seed: int
    quality_scale: float = 1.0

    def __post_init__(self):
        diffs = np.diff(self.position_bias)
        if not (diffs < 0).all():
            raise ValueError("position_bias must be strictly decreasing")

    def affinity(self, user_id: int) -> np.ndarray:
        stream = RngStream(self.seed).split("affinity", int(user_id))
        return stream.normal((self.catalog.num_categories,)) * self.affinity_sigma

    def quality(self, item_ids) -> np.ndarray:
        return self.catalog.quality[np.asarray(item_ids)] * self.quality_scale

    def list_click_probs(self, item_ids, user_id: int) -> np.ndarray:
        """Click probability at every position of an ordered list."""
        item_ids = np.asarray(item_ids)
        cats = self.catalog.category[item_ids]
        aff = self.affinity(user_id)[cats]
        qual = self.quality(item_ids)
        m = len(item_ids)
        dup = np.zeros(m)
        for j in range(1, m):
            dup[j] = np.count_nonzero(cats[:j] == cats[j])
        logits = qual + aff + self.position_bias[:m] - self.cannibalization * dup
        return 0.5 * (1.0 + np.tanh(0.5 * logits))

    def click_prob(self, item_ids, position: int, user_id: int) -> float:
        if not (0 <= position < len(item_ids)):
            raise ValueError(f"position {position} outside list of length {len(item_ids)}")
        return float(self.list_click_probs(item_ids, user_id)[position])

    def conversion_prob(self, item_id: int, user_id: int) -> float:
        cat = int(self.catalog.category[item_id])
        z = self.conversion_intercept + self.conversion_scale * (
            float(self.quality([item_id])[0]) + float(self.affinity(user_id)[cat])
        )
        return 0.5 * (1.0 + math.tanh(0.5 * z))

    def expected_clicks(self, item_ids, user_id: int) -> float:
        return float(self.list_click_probs(item_ids, user_id).sum())


@dataclass
class InteractionRecord:
    """One logged impression: history sessions, candidates, exposed list, labels."""

    user_id: int
    session_ids: np.ndarray       # (H, m, 3) feature ids
    session_clicks: np.ndarray    # (H, m)
    session_convs: np.ndarray     # (H, m)
    candidate_ids: np.ndarray     # (n, 3) feature ids
    exposed: np.ndarray           # (m,) indices into candidates
    clicks: np.ndarray            # (m,)
    convs: np.ndarray             # (m,)

    @property
    def exposed_ids(self) -> np.ndarray:
        """(m, 3) feature ids of the exposed list."""
        return self.candidate_ids[self.exposed]


@dataclass
class DataConfig:
    seed: int = 7
    num_items: int = 200
    num_categories: int = 8
    num_brands: int = 12
    num_users: int = 400
    history_sessions: int = 3     # H
    list_size: int = 5            # m
    num_candidates: int = 5       # n
    num_records: int = 10_000
    quality_sigma: float = 1.0
    affinity_sigma: float = 0.8
    position_intercept: float = 1.0
    position_slope: float = 0.5
    cannibalization: float = 1.0
    exposure_noise: float = 0.5
    conversion_scale: float = 1.0
    conversion_intercept: float = -1.0
    train_fraction: float = 0.9

    def __post_init__(self):
        if self.list_size > self.num_candidates:
            raise ValueError("list_size cannot exceed num_candidates")
        if self.num_candidates > self.num_items:
            raise ValueError("num_candidates cannot exceed num_items")
        if self.position_slope <= 0:
            raise ValueError("position_slope must be positive (position bias must decrease)")


def ground_truth(cfg: DataConfig, catalog: Catalog | None = None) -> GroundTruthModel:
    catalog = catalog or gen_catalog(cfg.seed, cfg.num_items, cfg.num_categories, cfg.num_brands)
    bias = cfg.position_intercept - cfg.position_slope * np.arange(cfg.list_size, dtype=np.float64)
    return GroundTruthModel(
        catalog=catalog,
        position_bias=bias,
        affinity_sigma=cfg.affinity_sigma,
        cannibalization=cfg.cannibalization,
        conversion_scale=cfg.conversion_scale,
        conversion_intercept=cfg.conversion_intercept,
        seed=cfg.seed,
        quality_scale=cfg.quality_sigma,
    )


def _sample_labels(model: GroundTruthModel, item_ids: np.ndarray, user_id: int,
                   rs: RngStream) -> tuple[np.ndarray, np.ndarray]:
    probs = model.list_click_probs(item_ids, user_id)
    clicks = (rs.uniform((len(item_ids),)) < probs).astype(np.int64)
    convs = np.zeros(len(item_ids), dtype=np.int64)
    for j in np.flatnonzero(clicks):
        convs[j] = int(rs.uniform() < model.conversion_prob(int(item_ids[j]), user_id))
    return clicks, convs


def _ranked_exposure(model: GroundTruthModel, pool: np.ndarray, user_id: int,
                     noise: float, m: int, rs: RngStream, personalized: bool) -> np.ndarray:
    score = model.quality(pool)
    if personalized:
        score += model.affinity(user_id)[model.catalog.category[pool]]
    score += rs.normal((len(pool),)) * noise
    order = np.argsort(-score, kind="stable")
    return pool[order[:m]]


def generate_records(cfg: DataConfig, model: GroundTruthModel | None = None) -> list[InteractionRecord]:
    model = model or ground_truth(cfg)
    cat = model.catalog
    root = RngStream(cfg.seed).split("records")
    records = []
    for i in range(cfg.num_records):
        rs = root.split(i)
        user_id = rs.split("user").integers(0, cfg.num_users)

        ses_ids = np.zeros((cfg.history_sessions, cfg.list_size, 3), dtype=np.int64)
        ses_clicks = np.zeros((cfg.history_sessions, cfg.list_size), dtype=np.int64)
        ses_convs = np.zeros((cfg.history_sessions, cfg.list_size), dtype=np.int64)
        for h in range(cfg.history_sessions):
            hs = rs.split("session", h)
            pool = hs.choice(cat.num_items, cfg.num_candidates)
            # history exposure was personalized, so session content reflects taste
            shown = _ranked_exposure(model, pool, user_id, cfg.exposure_noise,
                                     cfg.list_size, hs.split("rank"), personalized=True)
            ses_ids[h] = cat.feature_ids(shown)
            ses_clicks[h], ses_convs[h] = _sample_labels(model, shown, user_id, hs.split("labels"))

        cs = rs.split("current")
        pool = cs.choice(cat.num_items, cfg.num_candidates)
        shown = _ranked_exposure(model, pool, user_id, cfg.exposure_noise,
                                 cfg.list_size, cs.split("rank"), personalized=False)
        pool_pos = {int(item): idx for idx, item in enumerate(pool)}
        exposed = np.array([pool_pos[int(item)] for item in shown], dtype=np.int64)
        clicks, convs = _sample_labels(model, shown, user_id, cs.split("labels"))

        records.append(InteractionRecord(
            user_id=int(user_id),
            session_ids=ses_ids,
            session_clicks=ses_clicks,
            session_convs=ses_convs,
            candidate_ids=cat.feature_ids(pool),
            exposed=exposed,
            clicks=clicks,
            convs=convs,
        ))
    return records


def _record_to_json(rec: InteractionRecord) -> str:
    sessions = []
    for h in range(rec.session_ids.shape[0]):
        sessions.append([
            {
                "item": int(rec.session_ids[h, j, 0]),
                "cat": int(rec.session_ids[h, j, 1]),
                "brand": int(rec.session_ids[h, j, 2]),
                "click": int(rec.session_clicks[h, j]),
                "conv": int(rec.session_convs[h, j]),
            }
            for j in range(rec.session_ids.shape[1])
        ])
    obj = {
        "user_id": rec.user_id,
        "sessions": sessions,
        "candidates": [
            {"item": int(r[0]), "cat": int(r[1]), "brand": int(r[2])} for r in rec.candidate_ids
        ],
        "exposed": [int(x) for x in rec.exposed],
        "clicks": [int(x) for x in rec.clicks],
        "convs": [int(x) for x in rec.convs],
    }
    return json.dumps(obj, separators=(",", ":"))


def manifest_path(dataset_path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.name + MANIFEST_SUFFIX)


def write_dataset(records: list[InteractionRecord], cfg: DataConfig, path) -> Path:
    """Write records as JSONL plus a sidecar manifest; returns the data path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    num_train = int(math.floor(cfg.train_fraction * len(records)))
    try:
        with path.open("w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(_record_to_json(rec))
                fh.write("\n")
    except OSError as exc:
        raise DatasetError(f"cannot write dataset at {path}: {exc}") from exc
    manifest = {
        "version": SCHEMA_VERSION,
        "num_records": len(records),
        "num_train": num_train,
        "num_test": len(records) - num_train,
        "seed": cfg.seed,
        "list_size": cfg.list_size,
        "history_sessions": cfg.history_sessions,
        "num_candidates": cfg.num_candidates,
        "num_items": cfg.num_items,
        "num_categories": cfg.num_categories,
        "num_brands": cfg.num_brands,
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def gen_logs(cfg: DataConfig, path) -> tuple[list[InteractionRecord], list[InteractionRecord]]:
    """Generate, write and return the (train, test) record split."""
    records = generate_records(cfg)
    write_dataset(records, cfg, path)
    num_train = int(math.floor(cfg.train_fraction * len(records)))
    return records[:num_train], records[num_train:]


def _parse_record(obj: dict, line_no: int, manifest: dict) -> InteractionRecord:
    def fail(msg: str):
        raise DatasetError(f"line {line_no}: {msg}")

    H, m, n = manifest["history_sessions"], manifest["list_size"], manifest["num_candidates"]
    sessions = obj.get("sessions")
    if not isinstance(sessions, list) or len(sessions) != H:
        fail(f"field 'sessions' must hold {H} sessions")
    ses_ids = np.zeros((H, m, 3), dtype=np.int64)
    ses_clicks = np.zeros((H, m), dtype=np.int64)
    ses_convs = np.zeros((H, m), dtype=np.int64)
    for h, session in enumerate(sessions):
        if len(session) != m:
            fail(f"field 'sessions'[{h}] must hold {m} items")
        for j, it in enumerate(session):
            ses_ids[h, j] = (it["item"], it["cat"], it["brand"])
            ses_clicks[h, j] = it["click"]
            ses_convs[h, j] = it["conv"]
            if it["conv"] == 1 and it["click"] != 1:
                fail(f"field 'sessions'[{h}][{j}]: conversion without click")
    candidates = obj.get("candidates")
    if not isinstance(candidates, list) or len(candidates) != n:
        fail(f"field 'candidates' must hold {n} items")
    cand_ids = np.array([(c["item"], c["cat"], c["brand"]) for c in candidates], dtype=np.int64)
    exposed = np.asarray(obj.get("exposed", []), dtype=np.int64)
    if exposed.shape != (m,):
        fail(f"field 'exposed' must hold {m} candidate indices")
    if exposed.min(initial=0) < 0 or exposed.max(initial=-1) >= n:
        fail("field 'exposed': candidate index out of range")
    if len(set(exposed.tolist())) != m:
        fail("field 'exposed': duplicate candidate index")
    clicks = np.asarray(obj.get("clicks", []), dtype=np.int64)
    convs = np.asarray(obj.get("convs", []), dtype=np.int64)
    if clicks.shape != (m,) or convs.shape != (m,):
        fail("fields 'clicks'/'convs' must have list length")
    if ((convs == 1) & (clicks == 0)).any():
        fail("field 'convs': conversion without click")
    return InteractionRecord(
        user_id=int(obj["user_id"]),
        session_ids=ses_ids,
        session_clicks=ses_clicks,
        session_convs=ses_convs,
        candidate_ids=cand_ids,
        exposed=exposed,
        clicks=clicks,
        convs=convs,
    )


def load_dataset(path) -> tuple[list[InteractionRecord], dict]:
    """Load and validate a JSONL dataset; returns (records, manifest)."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset not found: {path}")
    mpath = manifest_path(path)
    if not mpath.exists():
        raise DatasetError(f"manifest not found: {mpath}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("version") != SCHEMA_VERSION:
        raise DatasetError(
            f"{mpath}: schema version {manifest.get('version')} != supported {SCHEMA_VERSION}"
        )
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
            try:
                records.append(_parse_record(obj, line_no, manifest))
            except KeyError as exc:
                raise DatasetError(f"line {line_no}: missing field {exc}") from exc
    if len(records) != manifest["num_records"]:
        raise DatasetError(
            f"{path}: {len(records)} records but manifest says {manifest['num_records']}"
        )
    return records, manifest


def split_records(records: list[InteractionRecord], manifest: dict):
    return records[: manifest["num_train"]], records[manifest["num_train"] :]

"""The advisee: a viewpoint estimator that takes one keypoint hint.

The real advisee is a two-stream CNN that is not part of this package.  Two
stand-ins cover it:

* :class:`SyntheticAdvisee`, a deterministic simulator whose only failure mode
  is the front/back azimuth flip that a poorly chosen keypoint cannot resolve;
* :func:`ingest_records`, which loads per-keypoint errors that a real advisee
  produced elsewhere.

Either way the adviser only ever sees :class:`AdviseeRecord` objects.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .so3 import EulerPose, pose_error
from .taxonomy import CLASSES, NUM_KEYPOINTS, TAXONOMY, ObjectClass, TaxonomyError

MAX_ERROR_DEG = 180.0


class InvalidQueryError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class RecordError(ValueError):
    """Base class for record validation failures."""

    def __init__(self, message, lineno=None):
        super().__init__(message if lineno is None else f"line {lineno}: {message}")
        self.lineno = lineno
        self.problems = [self]


class RecordParseError(RecordError):
    pass


class TaxonomyMismatchError(RecordError):
    pass


class ErrorRangeError(RecordError):
    pass


@dataclass(frozen=True)
class KeypointAnnotation:
    """A query: keypoint identity plus the pixel where the human clicked."""

    keypoint: int
    u: float = 0.0
    v: float = 0.0


@dataclass(frozen=True, eq=False)
class Instance:
    id: str
    cls: ObjectClass
    features: np.ndarray
    visible: tuple[KeypointAnnotation, ...]
    truth: EulerPose

    def __post_init__(self):
        if not self.visible:
            raise ConfigError(f"instance {self.id} has no visible keypoints")
        span = TAXONOMY.class_slice(self.cls)
        for ann in self.visible:
            if ann.keypoint not in span:
                raise TaxonomyMismatchError(
                    f"instance {self.id}: keypoint {ann.keypoint} is not a {self.cls.value} keypoint"
                )

    @property
    def visible_indices(self) -> tuple[int, ...]:
        return tuple(a.keypoint for a in self.visible)


@dataclass(eq=False)
class AdviseeRecord:
    """Per-keypoint geodesic errors (degrees) of the advisee on one instance.

    ``errors`` is keyed by global keypoint index and defined exactly on the
    visible keypoints.
    """

    instance_id: str
    cls: ObjectClass
    errors: dict[int, float]
    features: np.ndarray | None = None
    truth: EulerPose | None = None
    locations: dict[int, tuple[float, float]] | None = None

    def __post_init__(self):
        self.cls = ObjectClass.parse(self.cls)
        if not self.errors:
            raise RecordError(f"record {self.instance_id} has no visible keypoints")
        span = TAXONOMY.class_slice(self.cls)
        clean = {}
        for k in sorted(self.errors):
            e = float(self.errors[k])
            if k not in span:
                raise TaxonomyMismatchError(
                    f"record {self.instance_id}: keypoint {k} is not a {self.cls.value} keypoint"
                )
            if not (0.0 <= e <= MAX_ERROR_DEG):
                raise ErrorRangeError(
                    f"record {self.instance_id}: error {e} for keypoint {k} outside [0, 180] degrees"
                )
            clean[int(k)] = e
        self.errors = clean
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=float)

    @property
    def visible(self) -> tuple[int, ...]:
        return tuple(self.errors)

    def visible_mask(self) -> np.ndarray:
        mask = np.zeros(NUM_KEYPOINTS, dtype=bool)
        mask[list(self.errors)] = True
        return mask

    def error_vector(self) -> np.ndarray:
        """34-vector of errors in degrees, NaN where not visible."""
        out = np.full(NUM_KEYPOINTS, np.nan)
        out[list(self.errors)] = list(self.errors.values())
        return out


class Advisee(Protocol):
    def estimate(self, instance: Instance, query: KeypointAnnotation) -> EulerPose: ...


def estimate(advisee: Advisee, instance: Instance, query: KeypointAnnotation) -> EulerPose:
    return advisee.estimate(instance, query)


def substream(seed: int, instance_id: str, keypoint: int) -> np.random.Generator:
    """Random stream owned by one (seed, instance, keypoint) triple."""
    digest = hashlib.sha256(f"{seed}:{instance_id}:{keypoint}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def default_informativeness() -> tuple[float, ...]:
    """How well each keypoint disambiguates front from back.

    Wheels and handles sit on the sides of the vehicle and pin down the
    azimuth; other lateral points help less, and points on the symmetry plane
    (seats, head, headlight) barely help at all.
    """
    values = []
    for _, name in TAXONOMY.entries:
        if "handle" in name:
            values.append(0.95)
        elif "wheel" in name:
            values.append(0.85)
        elif "left" in name or "right" in name:
            values.append(0.55)
        else:
            values.append(0.15)
    return tuple(values)


@dataclass(frozen=True)
class SyntheticAdviseeParams:
    base_noise_deg: float = 5.0
    informativeness: tuple[float, ...] = field(default_factory=default_informativeness)
    difficulty_range: tuple[float, float] = (0.5, 1.0)
    instance_perturbation: float = 0.1
    feature_noise: float = 0.1
    visibility: float = 0.7
    pitch_mean_deg: float = 10.0
    pitch_std_deg: float = 6.0
    roll_std_deg: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "informativeness", tuple(float(x) for x in self.informativeness))
        object.__setattr__(self, "difficulty_range", tuple(float(x) for x in self.difficulty_range))
        if len(self.informativeness) != NUM_KEYPOINTS:
            raise ConfigError(f"informativeness needs {NUM_KEYPOINTS} entries")
        if not all(0.0 <= x <= 1.0 for x in self.informativeness):
            raise ConfigError("informativeness entries must lie in [0, 1]")
        lo, hi = self.difficulty_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"difficulty_range {self.difficulty_range} is not a sub-interval of [0, 1]")
        for name in ("base_noise_deg", "instance_perturbation", "feature_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 < self.visibility <= 1.0:
            raise ConfigError("visibility must lie in (0, 1]")

    @property
    def feature_dim(self) -> int:
        return len(CLASSES) + 2 * NUM_KEYPOINTS


@dataclass(frozen=True)
class _Latent:
    difficulty: float
    informativeness: np.ndarray


class SyntheticAdvisee:
    """Advisee whose estimate is the truth plus noise, flipped by π in azimuth
    with probability ``difficulty * (1 - informativeness)`` of the queried
    keypoint on that instance.
    """

    def __init__(self, params: SyntheticAdviseeParams, seed: int, latents: dict[str, _Latent]):
        self.params = params
        self.seed = seed
        self._latents = latents

    def flip_probability(self, instance: Instance, keypoint: int) -> float:
        latent = self._latents[instance.id]
        return latent.difficulty * (1.0 - latent.informativeness[keypoint])

    def estimate(self, instance: Instance, query: KeypointAnnotation) -> EulerPose:
        if query.keypoint not in instance.visible_indices:
            raise InvalidQueryError(f"keypoint {query.keypoint} is not visible on instance {instance.id}")
        rng = substream(self.seed, instance.id, query.keypoint)
        flip = rng.random() < self.flip_probability(instance, query.keypoint)
        noise = rng.normal(0.0, math.radians(self.params.base_noise_deg), size=3)
        truth = instance.truth
        pitch = min(max(truth.pitch + noise[1], -math.pi / 2), math.pi / 2)
        return EulerPose(
            truth.azimuth + (math.pi if flip else 0.0) + noise[0],
            pitch,
            truth.roll + noise[2],
        )


def generate_dataset(params: SyntheticAdviseeParams, n: int, seed: int):
    """Sample ``n`` synthetic instances and the advisee bound to them.

    Features are ``[class one-hot | visibility mask | per-keypoint
    informativeness + noise]``; the last block is what a good adviser has to
    learn to read.
    """
    if n < 1:
        raise ConfigError(f"dataset size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    base_inf = np.asarray(params.informativeness)
    lo, hi = params.difficulty_range
    instances = []
    latents = {}
    for i in range(n):
        cls = CLASSES[rng.integers(len(CLASSES))]
        span = TAXONOMY.class_slice(cls)
        while True:
            seen = rng.random(len(span)) < params.visibility
            if seen.any():
                break
        visible = tuple(KeypointAnnotation(span.start + j) for j in np.flatnonzero(seen))

        truth = EulerPose(
            rng.uniform(0.0, 2 * math.pi),
            math.radians(np.clip(rng.normal(params.pitch_mean_deg, params.pitch_std_deg), -80.0, 80.0)),
            math.radians(rng.normal(0.0, params.roll_std_deg)),
        )
        difficulty = rng.uniform(lo, hi)
        inf = np.clip(base_inf + params.instance_perturbation * rng.standard_normal(NUM_KEYPOINTS), 0.0, 1.0)

        onehot = np.zeros(len(CLASSES))
        onehot[CLASSES.index(cls)] = 1.0
        mask = np.zeros(NUM_KEYPOINTS)
        mask[[a.keypoint for a in visible]] = 1.0
        noisy_inf = inf + params.feature_noise * rng.standard_normal(NUM_KEYPOINTS)
        features = np.concatenate([onehot, mask, noisy_inf])

        inst_id = f"syn{seed}-{i:06d}"
        instances.append(Instance(inst_id, cls, features, visible, truth))
        latents[inst_id] = _Latent(difficulty, inf)
    return instances, SyntheticAdvisee(params, seed, latents)


def build_record(advisee: Advisee, instance: Instance) -> AdviseeRecord:
    """Query the advisee with every visible keypoint and record its errors in degrees."""
    errors = {}
    for ann in instance.visible:
        est = advisee.estimate(instance, ann)
        errors[ann.keypoint] = math.degrees(pose_error(est, instance.truth))
    return AdviseeRecord(
        instance.id,
        instance.cls,
        errors,
        features=np.array(instance.features, dtype=float),
        truth=instance.truth,
        locations={a.keypoint: (a.u, a.v) for a in instance.visible},
    )


def synthetic_records(params: SyntheticAdviseeParams, n: int, seed: int) -> list[AdviseeRecord]:
    instances, advisee = generate_dataset(params, n, seed)
    return [build_record(advisee, inst) for inst in instances]


# --- record files (JSON lines, degrees on the wire) ---


def record_to_json(record: AdviseeRecord) -> dict:
    out = {"id": record.instance_id, "class": record.cls.value}
    if record.features is not None:
        out["features"] = [float(x) for x in record.features]
    if record.truth is not None:
        out["truth_pose_deg"] = list(record.truth.to_degrees())
    out["errors"] = {TAXONOMY.name(k): e for k, e in record.errors.items()}
    if record.locations is not None:
        out["locations"] = {TAXONOMY.name(k): [float(u), float(v)] for k, (u, v) in record.locations.items()}
    return out


def write_records(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec)) + "\n")


def _keypoint_from_name(cls: ObjectClass, name: str, lineno: int) -> int:
    try:
        return TAXONOMY.keypoint_index(cls, name)
    except TaxonomyError as exc:
        raise TaxonomyMismatchError(str(exc), lineno) from None


def record_from_json(obj, lineno=None) -> AdviseeRecord:
    if not isinstance(obj, dict):
        raise RecordParseError("entry is not a JSON object", lineno)
    for key in ("id", "class", "errors"):
        if key not in obj:
            raise RecordParseError(f"missing field {key!r}", lineno)
    try:
        cls = ObjectClass.parse(obj["class"])
    except TaxonomyError as exc:
        raise TaxonomyMismatchError(str(exc), lineno) from None
    if not isinstance(obj["errors"], dict):
        raise RecordParseError("'errors' must map keypoint names to degrees", lineno)

    errors = {}
    for name, value in obj["errors"].items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise RecordParseError(f"error for {name!r} is not a number", lineno)
        errors[_keypoint_from_name(cls, name, lineno)] = float(value)

    features = None
    if obj.get("features") is not None:
        try:
            features = np.asarray(obj["features"], dtype=float)
        except (TypeError, ValueError):
            raise RecordParseError("'features' must be a number array", lineno) from None
        if features.ndim != 1 or not np.all(np.isfinite(features)):
            raise RecordParseError("'features' must be a finite number array", lineno)

    truth = None
    if obj.get("truth_pose_deg") is not None:
        try:
            truth = EulerPose.from_degrees(*(float(x) for x in obj["truth_pose_deg"]))
        except (TypeError, ValueError) as exc:
            raise RecordParseError(f"bad 'truth_pose_deg': {exc}", lineno) from None

    locations = None
    if obj.get("locations") is not None:
        locations = {}
        for name, uv in obj["locations"].items():
            k = _keypoint_from_name(cls, name, lineno)
            if not isinstance(uv, (list, tuple)) or len(uv) != 2:
                raise RecordParseError(f"location for {name!r} must be [u, v]", lineno)
            locations[k] = (float(uv[0]), float(uv[1]))

    try:
        return AdviseeRecord(str(obj["id"]), cls, errors, features=features, truth=truth, locations=locations)
    except RecordError as exc:
        raise type(exc)(str(exc), lineno) from None


def ingest_records(path) -> list[AdviseeRecord]:
    """Load and validate a JSON-lines record file.

    Every bad line is collected; the raised error (typed after the first
    problem) lists all of them with line numbers.
    """
    records = []
    problems = []
    feature_dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise RecordParseError(f"invalid JSON ({exc.msg})", lineno) from None
                rec = record_from_json(obj, lineno)
                if rec.features is not None:
                    if feature_dim is None:
                        feature_dim = len(rec.features)
                    elif len(rec.features) != feature_dim:
                        raise RecordParseError(
                            f"feature length {len(rec.features)} differs from earlier records ({feature_dim})",
                            lineno,
                        )
                records.append(rec)
            except RecordError as exc:
                problems.append(exc)
    if problems:
        err = type(problems[0])(f"{path}: {len(problems)} bad line(s)\n" + "\n".join(str(p) for p in problems))
        err.problems = problems
        raise err
    if not records:
        raise RecordParseError(f"{path}: no records")
    return records

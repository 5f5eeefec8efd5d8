"""Dataset records, file format, and splitting.

A dataset is line-delimited JSON: one header line carrying the format tag,
version, and manifest, followed by one line per epoch.  Floats are written
with 17 significant digits so emit -> parse round-trips are bit exact, and
field order is fixed so identical inputs produce identical bytes.  Parsing
is strict: unknown keys, wrong types, or out-of-range values are rejected
rather than ignored.  See docs/format.md for the grammar.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .errors import EmptySplit, FormatError, OrderError, VersionError

FORMAT_TAG = "gnss-epochs"
FORMAT_VERSION = 1

SYSTEMS = ("GPS", "BDS", "GAL", "GLO")
# Systems carrying an inter-system bias state, indexed relative to GPS.
ISB_SYSTEMS = ("BDS", "GAL", "GLO")


@dataclass
class SatObservation:
    """One satellite's measurement at one epoch.

    ``iono_delay``/``tropo_delay`` are optional precomputed slant delays in
    meters; when absent the correction models are consulted instead.
    """

    system: str
    sat_id: int
    pseudorange: float          # [m]
    snr: float                  # [dB-Hz]
    sat_pos: np.ndarray         # ECEF [m], shape (3,)
    sat_clock_bias: float       # [s]
    tgd: float                  # [s]
    iono_delay: float | None = None   # [m]
    tropo_delay: float | None = None  # [m]

    def validate(self):
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if not (1e6 < self.pseudorange < 1e8):
            raise ValueError(f"pseudorange {self.pseudorange} outside (1e6, 1e8) m")
        if not (0.0 <= self.snr <= 70.0):
            raise ValueError(f"snr {self.snr} outside [0, 70] dB-Hz")
        if not abs(self.sat_clock_bias) < 1e-2:
            raise ValueError(f"satellite clock bias {self.sat_clock_bias} too large")
        if self.sat_pos.shape != (3,) or not np.all(np.isfinite(self.sat_pos)):
            raise ValueError("satellite position must be a finite 3-vector")


@dataclass
class EpochRecord:
    """All observations at one timestamp plus optional ground truth."""

    t: float
    observations: list
    truth: np.ndarray | None = None       # ECEF receiver position [m]
    truth_clock: float | None = None      # receiver clock bias [s]

    def validate(self):
        seen = set()
        for obs in self.observations:
            obs.validate()
            key = (obs.system, obs.sat_id)
            if key in seen:
                raise ValueError(f"duplicate satellite {key} in epoch t={self.t}")
            seen.add(key)


@dataclass
class DatasetManifest:
    name: str
    epoch_count: int
    systems: list = field(default_factory=list)
    has_truth: bool = False
    source: str = "simulated"     # {"simulated", "imported"}
    seed: int | None = None


# --- serialization ---------------------------------------------------------

def _fmt(x: float) -> str:
    """17 significant digits: enough to reproduce any binary double exactly."""
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite value {x!r} cannot be serialized")
    return format(float(x), ".17g")


def _obs_line(o: SatObservation) -> str:
    parts = [
        f'"sys":{json.dumps(o.system)}',
        f'"id":{int(o.sat_id)}',
        f'"pr":{_fmt(o.pseudorange)}',
        f'"snr":{_fmt(o.snr)}',
        f'"pos":[{_fmt(o.sat_pos[0])},{_fmt(o.sat_pos[1])},{_fmt(o.sat_pos[2])}]',
        f'"clk":{_fmt(o.sat_clock_bias)}',
        f'"tgd":{_fmt(o.tgd)}',
    ]
    if o.iono_delay is not None:
        parts.append(f'"iono":{_fmt(o.iono_delay)}')
    if o.tropo_delay is not None:
        parts.append(f'"tropo":{_fmt(o.tropo_delay)}')
    return "{" + ",".join(parts) + "}"


def _epoch_line(r: EpochRecord) -> str:
    parts = [f'"t":{_fmt(r.t)}',
             '"obs":[' + ",".join(_obs_line(o) for o in r.observations) + "]"]
    if r.truth is not None:
        parts.append(f'"truth":[{_fmt(r.truth[0])},{_fmt(r.truth[1])},{_fmt(r.truth[2])}]')
    if r.truth_clock is not None:
        parts.append(f'"truth_clock":{_fmt(r.truth_clock)}')
    return "{" + ",".join(parts) + "}"


def _header_line(m: DatasetManifest) -> str:
    manifest = [
        f'"name":{json.dumps(m.name)}',
        f'"epoch_count":{int(m.epoch_count)}',
        '"systems":[' + ",".join(json.dumps(s) for s in m.systems) + "]",
        f'"has_truth":{"true" if m.has_truth else "false"}',
        f'"source":{json.dumps(m.source)}',
    ]
    if m.seed is not None:
        manifest.append(f'"seed":{int(m.seed)}')
    return ('{"format":' + json.dumps(FORMAT_TAG)
            + f',"version":{FORMAT_VERSION}'
            + ',"manifest":{' + ",".join(manifest) + "}}")


def emit_dataset(manifest: DatasetManifest, records, path):
    """Write a dataset file; output bytes are a pure function of the input."""
    lines = [_header_line(manifest)]
    lines.extend(_epoch_line(r) for r in records)
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc


# --- parsing ---------------------------------------------------------------

def _require_keys(obj, allowed, required, line_no, what):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise FormatError(line_no, f"unknown {what} field(s): {sorted(unknown)}")
    missing = set(required) - set(obj)
    if missing:
        raise FormatError(line_no, f"missing {what} field(s): {sorted(missing)}")


def _as_float(v, line_no, name):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(line_no, f"{name} must be a number, got {type(v).__name__}")
    return float(v)


def _as_int(v, line_no, name):
    if isinstance(v, bool) or not isinstance(v, int):
        raise FormatError(line_no, f"{name} must be an integer")
    return v


def _parse_obs(obj, line_no) -> SatObservation:
    _require_keys(obj, ("sys", "id", "pr", "snr", "pos", "clk", "tgd", "iono", "tropo"),
                  ("sys", "id", "pr", "snr", "pos", "clk", "tgd"), line_no, "observation")
    sys_name = obj["sys"]
    if sys_name not in SYSTEMS:
        raise FormatError(line_no, f"unknown system {sys_name!r}")
    pos = obj["pos"]
    if not (isinstance(pos, list) and len(pos) == 3):
        raise FormatError(line_no, "pos must be a 3-element array")
    obs = SatObservation(
        system=sys_name,
        sat_id=_as_int(obj["id"], line_no, "id"),
        pseudorange=_as_float(obj["pr"], line_no, "pr"),
        snr=_as_float(obj["snr"], line_no, "snr"),
        sat_pos=np.array([_as_float(c, line_no, "pos") for c in pos]),
        sat_clock_bias=_as_float(obj["clk"], line_no, "clk"),
        tgd=_as_float(obj["tgd"], line_no, "tgd"),
        iono_delay=_as_float(obj["iono"], line_no, "iono") if "iono" in obj else None,
        tropo_delay=_as_float(obj["tropo"], line_no, "tropo") if "tropo" in obj else None,
    )
    try:
        obs.validate()
    except ValueError as exc:
        raise FormatError(line_no, str(exc)) from exc
    return obs


def _parse_epoch(text, line_no) -> EpochRecord:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(line_no, f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise FormatError(line_no, "epoch line must be a JSON object")
    _require_keys(obj, ("t", "obs", "truth", "truth_clock"), ("t", "obs"),
                  line_no, "epoch")
    if not isinstance(obj["obs"], list):
        raise FormatError(line_no, "obs must be an array")
    truth = None
    if "truth" in obj:
        tv = obj["truth"]
        if not (isinstance(tv, list) and len(tv) == 3):
            raise FormatError(line_no, "truth must be a 3-element array")
        truth = np.array([_as_float(c, line_no, "truth") for c in tv])
    record = EpochRecord(
        t=_as_float(obj["t"], line_no, "t"),
        observations=[_parse_obs(o, line_no) if isinstance(o, dict)
                      else _raise_obs_type(line_no) for o in obj["obs"]],
        truth=truth,
        truth_clock=(_as_float(obj["truth_clock"], line_no, "truth_clock")
                     if "truth_clock" in obj else None),
    )
    try:
        record.validate()
    except ValueError as exc:
        raise FormatError(line_no, str(exc)) from exc
    return record


def _raise_obs_type(line_no):
    raise FormatError(line_no, "observation entries must be JSON objects")


def _parse_header(text) -> DatasetManifest:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(1, f"invalid JSON header: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise FormatError(1, "header must be a JSON object")
    _require_keys(obj, ("format", "version", "manifest"),
                  ("format", "version", "manifest"), 1, "header")
    if obj["format"] != FORMAT_TAG:
        raise VersionError(f"not a {FORMAT_TAG} file (format={obj['format']!r})")
    if obj["version"] != FORMAT_VERSION:
        raise VersionError(f"unsupported format version {obj['version']!r}")
    m = obj["manifest"]
    if not isinstance(m, dict):
        raise FormatError(1, "manifest must be a JSON object")
    _require_keys(m, ("name", "epoch_count", "systems", "has_truth", "source", "seed"),
                  ("name", "epoch_count", "systems", "has_truth", "source"),
                  1, "manifest")
    if not isinstance(m["name"], str):
        raise FormatError(1, "manifest name must be a string")
    if not isinstance(m["systems"], list) or any(s not in SYSTEMS for s in m["systems"]):
        raise FormatError(1, "manifest systems must list known constellations")
    if not isinstance(m["has_truth"], bool):
        raise FormatError(1, "manifest has_truth must be a boolean")
    if m["source"] not in ("simulated", "imported"):
        raise FormatError(1, f"unknown source {m['source']!r}")
    return DatasetManifest(
        name=m["name"],
        epoch_count=_as_int(m["epoch_count"], 1, "epoch_count"),
        systems=list(m["systems"]),
        has_truth=m["has_truth"],
        source=m["source"],
        seed=_as_int(m["seed"], 1, "seed") if "seed" in m else None,
    )


def parse_dataset(path):
    """Parse a dataset file into (manifest, list of EpochRecord).

    Strict: any schema violation raises FormatError/VersionError/OrderError.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(1, "empty file (missing header)")
    manifest = _parse_header(lines[0])
    records = []
    last_t = None
    for i, text in enumerate(lines[1:], start=2):
        if not text.strip():
            raise FormatError(i, "blank line in body")
        record = _parse_epoch(text, i)
        if last_t is not None and record.t <= last_t:
            raise OrderError(f"line {i}: t={record.t} not after t={last_t}")
        last_t = record.t
        records.append(record)
    if manifest.epoch_count != len(records):
        raise FormatError(1, f"manifest epoch_count {manifest.epoch_count} "
                             f"!= {len(records)} epoch lines")
    return manifest, records


def split_dataset(records, fractions):
    """Split into contiguous, order-preserving time slices.

    ``fractions`` are positive and sum to at most 1; boundaries fall at
    floor(cumulative_fraction * n).  Raises EmptySplit if any slice would
    be empty.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if sum(fractions) > 1.0 + 1e-12:
        raise ValueError("fractions sum to more than 1")
    n = len(records)
    bounds = [0]
    acc = 0.0
    for f in fractions:
        acc += f
        bounds.append(min(n, int(math.floor(acc * n + 1e-9))))
    subsets = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            raise EmptySplit(f"split [{lo}:{hi}] of {n} epochs is empty")
        subsets.append(records[lo:hi])
    return subsets

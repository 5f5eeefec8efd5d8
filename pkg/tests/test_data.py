import math

import numpy as np
import pytest

from gnssfilter import data
from gnssfilter.data import (DatasetManifest, EpochRecord, SatObservation,
                             emit_dataset, parse_dataset, split_dataset)
from gnssfilter.errors import EmptySplit, FormatError, OrderError, VersionError


def random_dataset(rng, n_epochs, name="t"):
    records = []
    t = 0.0
    for _ in range(n_epochs):
        t += rng.uniform(0.5, 2.0)
        obs = []
        n_sats = rng.integers(0, 9)
        ids = rng.choice(40, size=n_sats, replace=False)
        for sat_id in ids:
            obs.append(SatObservation(
                system=str(rng.choice(data.SYSTEMS)),
                sat_id=int(sat_id) + 1,
                pseudorange=float(rng.uniform(1.9e7, 2.6e7)),
                snr=float(rng.uniform(20, 55)),
                sat_pos=rng.uniform(-2.6e7, 2.6e7, size=3),
                sat_clock_bias=float(rng.uniform(-1e-3, 1e-3)),
                tgd=float(rng.uniform(0, 1e-8)),
                iono_delay=float(rng.uniform(0, 10)) if rng.random() < 0.5 else None,
                tropo_delay=float(rng.uniform(0, 20)) if rng.random() < 0.5 else None,
            ))
        truth = rng.uniform(-6.4e6, 6.4e6, size=3) if rng.random() < 0.5 else None
        records.append(EpochRecord(
            t=t, observations=obs, truth=truth,
            truth_clock=float(rng.uniform(-1e-3, 1e-3)) if truth is not None else None))
    systems = sorted({o.system for r in records for o in r.observations})
    manifest = DatasetManifest(name=name, epoch_count=len(records),
                               systems=systems, has_truth=True,
                               source="simulated", seed=int(rng.integers(1e6)))
    return manifest, records


def assert_records_equal(a, b):
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.t == rb.t
        assert (ra.truth is None) == (rb.truth is None)
        if ra.truth is not None:
            assert np.array_equal(ra.truth, rb.truth)
        assert ra.truth_clock == rb.truth_clock
        assert len(ra.observations) == len(rb.observations)
        for oa, ob in zip(ra.observations, rb.observations):
            assert (oa.system, oa.sat_id) == (ob.system, ob.sat_id)
            assert oa.pseudorange == ob.pseudorange
            assert oa.snr == ob.snr
            assert np.array_equal(oa.sat_pos, ob.sat_pos)
            assert oa.sat_clock_bias == ob.sat_clock_bias
            assert oa.tgd == ob.tgd
            assert oa.iono_delay == ob.iono_delay
            assert oa.tropo_delay == ob.tropo_delay


def test_empty_body(tmp_path):
    path = tmp_path / "empty.jsonl"
    manifest = DatasetManifest("empty", 0, [], False, "simulated")
    emit_dataset(manifest, [], path)
    m2, records = parse_dataset(path)
    assert m2.epoch_count == 0
    assert records == []


def test_round_trip_random_datasets(tmp_path):
    rng = np.random.default_rng(21)
    for k in range(100):
        manifest, records = random_dataset(rng, int(rng.integers(0, 12)))
        path = tmp_path / f"d{k}.jsonl"
        emit_dataset(manifest, records, path)
        m2, r2 = parse_dataset(path)
        assert m2 == manifest
        assert_records_equal(records, r2)


def test_emit_deterministic_bytes(tmp_path):
    rng = np.random.default_rng(5)
    manifest, records = random_dataset(rng, 6)
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    emit_dataset(manifest, records, p1)
    emit_dataset(manifest, records, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_seventeen_digit_serialization_is_lossless(tmp_path):
    values = [math.pi, math.pi * 1e7, 1.0 / 3.0, math.sqrt(2) * 2.1e7,
              2.5e7 + math.pi, -math.pi / 1e4]
    for v in values:
        assert float(data._fmt(v)) == v, f"{v!r} not reproduced"
    obs = SatObservation("GPS", 1, 2.0e7 + math.pi, 45.0,
                         np.array([math.pi * 1e6, -math.e * 1e6, math.sqrt(2) * 1e7]),
                         math.pi * 1e-4, math.pi * 1e-9,
                         iono_delay=math.pi, tropo_delay=math.e)
    rec = EpochRecord(t=math.pi, observations=[obs],
                      truth=np.array([math.pi * 1e6, 1.0, 2.0]), truth_clock=1e-3)
    manifest = DatasetManifest("pi", 1, ["GPS"], True, "simulated")
    path = tmp_path / "pi.jsonl"
    emit_dataset(manifest, [rec], path)
    _, (r2,) = parse_dataset(path)
    assert_records_equal([rec], [r2])


def test_hand_written_fixture(tmp_path):
    lines = [
        '{"format":"gnss-epochs","version":1,"manifest":{"name":"hand",'
        '"epoch_count":2,"systems":["GPS","BDS"],"has_truth":false,'
        '"source":"imported"}}',
    ]
    def obs(sys_name, sat_id):
        return ('{"sys":"%s","id":%d,"pr":21000000.5,"snr":44,'
                '"pos":[26000000,1000000,%d],"clk":0.0001,"tgd":1e-09}'
                % (sys_name, sat_id, sat_id * 1000))
    lines.append('{"t":10.0,"obs":[' + ",".join(
        obs("GPS", i) for i in range(1, 6)) + ']}')
    lines.append('{"t":11.0,"obs":[' + ",".join(
        [obs("GPS", i) for i in range(1, 5)] +
        [obs("BDS", i) for i in range(1, 4)]) + ']}')
    path = tmp_path / "hand.jsonl"
    path.write_text("\n".join(lines) + "\n")
    manifest, records = parse_dataset(path)
    assert manifest.name == "hand"
    assert [len(r.observations) for r in records] == [5, 7]
    assert records[0].t == 10.0
    assert records[1].observations[4].system == "BDS"
    assert records[1].observations[4].sat_clock_bias == 0.0001
    assert records[0].truth is None


def test_unknown_field_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        '{"format":"gnss-epochs","version":1,"manifest":{"name":"x",'
        '"epoch_count":1,"systems":[],"has_truth":false,"source":"simulated"}}\n'
        '{"t":1.0,"obs":[],"extra":1}\n')
    with pytest.raises(FormatError, match="unknown epoch field"):
        parse_dataset(path)


def test_version_error(tmp_path):
    path = tmp_path / "v9.jsonl"
    path.write_text('{"format":"gnss-epochs","version":9,"manifest":{"name":"x",'
                    '"epoch_count":0,"systems":[],"has_truth":false,'
                    '"source":"simulated"}}\n')
    with pytest.raises(VersionError):
        parse_dataset(path)


def test_order_error(tmp_path):
    path = tmp_path / "ord.jsonl"
    path.write_text(
        '{"format":"gnss-epochs","version":1,"manifest":{"name":"x",'
        '"epoch_count":2,"systems":[],"has_truth":false,"source":"simulated"}}\n'
        '{"t":5.0,"obs":[]}\n{"t":5.0,"obs":[]}\n')
    with pytest.raises(OrderError):
        parse_dataset(path)


def test_fuzz_single_byte_mutations(tmp_path):
    # every mutation must either parse cleanly or raise a structured error;
    # the full 10k-mutation corpus runs in the acceptance suite
    rng = np.random.default_rng(99)
    manifest, records = random_dataset(rng, 4)
    path = tmp_path / "seed.jsonl"
    emit_dataset(manifest, records, path)
    blob = bytearray(path.read_bytes())
    mutated = tmp_path / "mut.jsonl"
    for _ in range(1500):
        i = int(rng.integers(len(blob)))
        original = blob[i]
        blob[i] = int(rng.integers(32, 127))
        mutated.write_bytes(bytes(blob))
        try:
            parse_dataset(mutated)
        except (FormatError, VersionError, OrderError, UnicodeDecodeError):
            pass
        blob[i] = original


def test_split_whole():
    records = list(range(10))
    (s,) = split_dataset(records, (1.0,))
    assert s == records


def test_split_half():
    records = list(range(10))
    a, b = split_dataset(records, (0.5, 0.5))
    assert a == list(range(5)) and b == list(range(5, 10))


def test_split_60_20_20():
    records = list(range(100))
    a, b, c = split_dataset(records, (0.6, 0.2, 0.2))
    assert (len(a), len(b), len(c)) == (60, 20, 20)
    assert a[-1] == 59 and b[0] == 60 and c[0] == 80


def test_split_empty_raises():
    with pytest.raises(EmptySplit):
        split_dataset(list(range(3)), (0.05, 0.95))

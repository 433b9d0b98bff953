import pytest

from ragscale.corpus import ActiveScale
from ragscale.errors import IntegrityError
from ragscale.generate import GenerationRecord
from ragscale.retrieve import empty_bundle
from ragscale.runlog import BundleStore, RecordLog, load_records, truncate_to_sealed


def rec(i, n=1):
    return GenerationRecord(
        query_id=f"q{i}", model_id="m", n=n, order="forward", prediction=f"p{i}",
        abstained=False, latency_ms=1.5, raw_response="raw", bundle_digest="",
    )


def test_roundtrip(tmp_path):
    path = tmp_path / "records.log"
    with RecordLog(path) as log:
        for i in range(5):
            log.append(rec(i))
    loaded = load_records(path)
    assert loaded == [rec(i) for i in range(5)]


def test_missing_log_is_empty(tmp_path):
    assert load_records(tmp_path / "absent.log") == []


def test_corrupted_line_fails_with_line_number(tmp_path):
    path = tmp_path / "records.log"
    with RecordLog(path) as log:
        log.append(rec(0))
        log.append(rec(1))
    lines = path.read_text().splitlines()
    lines[2] = lines[2][:10] + "GARBAGE" + lines[2][10:]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(IntegrityError, match="line 3"):
        load_records(path)


def test_checksum_mismatch_detected(tmp_path):
    path = tmp_path / "records.log"
    with RecordLog(path) as log:
        log.append(rec(0))
    text = path.read_text().replace('"p0"', '"px"')
    path.write_text(text)
    with pytest.raises(IntegrityError, match="checksum"):
        load_records(path)


def test_unsealed_tail_strict_vs_resume(tmp_path):
    path = tmp_path / "records.log"
    with RecordLog(path) as log:
        log.append(rec(0))
    with path.open("a") as fh:
        fh.write('{"query_id": "q9", "model_id": "m", "n": 1, "order": "forward", ')
    with pytest.raises(IntegrityError):
        load_records(path)
    assert load_records(path, resume=True) == [rec(0)]


def test_truncate_drops_crash_tail_and_resume_appends(tmp_path):
    path = tmp_path / "records.log"
    with RecordLog(path) as log:
        log.append(rec(0))
    sealed = path.read_bytes()
    with path.open("ab") as fh:
        fh.write(b'{"partial": tru')
    truncate_to_sealed(path)
    assert path.read_bytes() == sealed
    with RecordLog(path) as log:
        log.append(rec(1))
    assert load_records(path) == [rec(0), rec(1)]


def test_bundle_store_roundtrip_and_verification(tmp_path):
    store = BundleStore(tmp_path / "bundles")
    bundle = empty_bundle("q0", ActiveScale(0))
    digest = store.save(bundle)
    assert store.load(digest) == bundle
    # tampering is detected
    victim = tmp_path / "bundles" / f"{digest}.json"
    victim.write_text(victim.read_text().replace("q0", "q1"))
    with pytest.raises(IntegrityError):
        store.load(digest)
    with pytest.raises(IntegrityError):
        store.load("0" * 64)

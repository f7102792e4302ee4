import random
import threading

import pytest

from gridhub.encoding import ZERO_HASH, state_hash
from gridhub.errors import ChainBroken, EmptyHistory, UnknownVersion, ValidationError
from gridhub.history import (
    TableHistory,
    encode_commit,
    read_log_records,
    replay,
    verify_chain,
)
from gridhub.model import Cell, CellEdit, apply_edits, new_grid

from .conftest import make_spec, random_state
from .oracles import oracle_commit_hash


def build_history(tmp_path, spec, n_commits, seed=7):
    rng = random.Random(seed)
    h = TableHistory(spec, tmp_path / "t.log")
    for i in range(n_commits):
        h.commit(random_state(spec, rng), f"author{i % 3}", "ui", 1000 + i * 10)
    return h


class TestCommit:
    def test_genesis_links_to_zero_hash(self, tmp_path, spec):
        h = TableHistory(spec, tmp_path / "t.log")
        c = h.commit(new_grid(spec), "alice", "table", 500)
        assert c.version == 1
        assert c.parent_hash == ZERO_HASH
        assert c.grid_hash == state_hash(new_grid(spec))

    def test_versions_are_sequential_and_linked(self, tmp_path, spec):
        h = build_history(tmp_path, spec, 10)
        for i, c in enumerate(h.commits):
            assert c.version == i + 1
            if i:
                assert c.parent_hash == h.commits[i - 1].commit_hash

    def test_commit_hash_matches_independent_formula(self, tmp_path, spec):
        h = build_history(tmp_path, spec, 5)
        for c in h.commits:
            assert c.commit_hash == oracle_commit_hash(
                c.parent_hash, c.version, c.author, c.source, c.timestamp_ms, c.grid
            )

    def test_same_grid_twice_is_absorbed(self, tmp_path, spec):
        h = TableHistory(spec, tmp_path / "t.log")
        g = random_state(spec, random.Random(1))
        c1 = h.commit(g, "alice", "ui", 100)
        size_before = (tmp_path / "t.log").stat().st_size
        c2 = h.commit(g, "bob", "ui", 200)
        assert c2 is c1
        assert (tmp_path / "t.log").stat().st_size == size_before

    def test_clock_going_backwards_is_clamped(self, tmp_path, spec):
        h = TableHistory(spec, tmp_path / "t.log")
        h.commit(random_state(spec, random.Random(1)), "a", "ui", 5000)
        c = h.commit(random_state(spec, random.Random(2)), "a", "ui", 4000)
        assert c.timestamp_ms == 5000

    def test_bad_author_or_source(self, tmp_path, spec):
        h = TableHistory(spec, tmp_path / "t.log")
        g = new_grid(spec)
        with pytest.raises(ValidationError):
            h.commit(g, "", "ui", 1)
        with pytest.raises(ValidationError):
            h.commit(g, "a" * 65, "ui", 1)
        with pytest.raises(ValidationError):
            h.commit(g, "alice", "carrier-pigeon", 1)

    def test_head_and_get(self, tmp_path, spec):
        h = TableHistory(spec, tmp_path / "t.log")
        with pytest.raises(EmptyHistory):
            h.head
        build = build_history(tmp_path, spec, 3, seed=9)
        assert build.head.version == 3
        assert build.get(2).version == 2
        with pytest.raises(UnknownVersion):
            build.get(4)
        with pytest.raises(UnknownVersion):
            build.get(0)

    def test_concurrent_commits_stay_sequential(self, tmp_path, spec):
        h = TableHistory(spec, tmp_path / "t.log")
        errors = []

        def hammer(k):
            rng = random.Random(k)
            try:
                for _ in range(20):
                    h.commit(random_state(spec, rng), f"w{k}", "worker", 1)
            except Exception as e:  # pragma: no cover
                errors.append(e)

        threads = [threading.Thread(target=hammer, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        versions = [c.version for c in h.commits]
        assert versions == list(range(1, len(versions) + 1))
        records, terminated = read_log_records(tmp_path / "t.log")
        assert verify_chain(records, spec, terminated).ok


class TestVerify:
    def test_ok_on_clean_log(self, tmp_path, spec):
        build_history(tmp_path, spec, 20)
        records, terminated = read_log_records(tmp_path / "t.log")
        res = verify_chain(records, spec, terminated)
        assert res.ok and res.record_count == 20

    def test_missing_final_newline_fails_strict_verify(self, tmp_path, spec):
        build_history(tmp_path, spec, 3)
        path = tmp_path / "t.log"
        path.write_bytes(path.read_bytes()[:-1])
        records, terminated = read_log_records(path)
        res = verify_chain(records, spec, terminated)
        assert not res.ok and res.broken_at == 3

    def test_flips_at_sampled_positions_all_detected(self, tmp_path, spec):
        """A denser sweep runs in the acceptance suite; here, one flip in
        every tenth byte must break verification."""
        build_history(tmp_path, spec, 4)
        original = (tmp_path / "t.log").read_bytes()
        records_ok, term_ok = read_log_records(tmp_path / "t.log")
        assert verify_chain(records_ok, spec, term_ok).ok
        for pos in range(0, len(original), 10):
            mutated = bytearray(original)
            mutated[pos] ^= 0x01
            (tmp_path / "flip.log").write_bytes(bytes(mutated))
            records, terminated = read_log_records(tmp_path / "flip.log")
            res = verify_chain(records, spec, terminated)
            assert not res.ok, f"flip at byte {pos} went unnoticed"

    def test_reordered_records_detected(self, tmp_path, spec):
        build_history(tmp_path, spec, 4)
        records, terminated = read_log_records(tmp_path / "t.log")
        swapped = [records[0], records[2], records[1], records[3]]
        res = verify_chain(swapped, spec, terminated)
        assert not res.ok and res.broken_at == 2

    def test_deleted_record_detected(self, tmp_path, spec):
        build_history(tmp_path, spec, 4)
        records, terminated = read_log_records(tmp_path / "t.log")
        res = verify_chain(records[:1] + records[2:], spec, terminated)
        assert not res.ok and res.broken_at == 2

    def test_truncation_to_prefix_still_verifies(self, tmp_path, spec):
        """Chopping whole records off the end is indistinguishable from
        an older log, so it must verify; integrity covers content and
        order, not liveness."""
        build_history(tmp_path, spec, 4)
        records, _ = read_log_records(tmp_path / "t.log")
        assert verify_chain(records[:2], spec, True).ok


class TestReplayAndRecovery:
    def test_replay_rebuilds_commits(self, tmp_path, spec):
        h = build_history(tmp_path, spec, 6)
        records, terminated = read_log_records(tmp_path / "t.log")
        commits, warnings = replay(records, spec, terminated)
        assert warnings == []
        assert commits == h.commits

    def test_replay_discards_torn_tail(self, tmp_path, spec):
        h = build_history(tmp_path, spec, 3)
        path = tmp_path / "t.log"
        path.write_bytes(path.read_bytes()[:-5])
        records, terminated = read_log_records(path)
        commits, warnings = replay(records, spec, terminated)
        assert [c.version for c in commits] == [1, 2]
        assert len(warnings) == 1

    def test_replay_raises_on_interior_corruption(self, tmp_path, spec):
        build_history(tmp_path, spec, 3)
        path = tmp_path / "t.log"
        data = bytearray(path.read_bytes())
        data[5] ^= 0x01
        path.write_bytes(bytes(data))
        records, terminated = read_log_records(path)
        with pytest.raises(ChainBroken):
            replay(records, spec, terminated)

    def test_open_recovers_from_torn_tail_and_continues(self, tmp_path, spec):
        build_history(tmp_path, spec, 3)
        path = tmp_path / "t.log"
        path.write_bytes(path.read_bytes()[:-5])
        h, warnings = TableHistory.open(spec, path)
        assert len(warnings) == 1
        assert h.head.version == 2
        c = h.commit(random_state(spec, random.Random(99)), "fixer", "cli", 10_000)
        assert c.version == 3
        records, terminated = read_log_records(path)
        assert verify_chain(records, spec, terminated).ok

    def test_reopen_resumes_version_numbering(self, tmp_path, spec):
        build_history(tmp_path, spec, 5)
        h, warnings = TableHistory.open(spec, tmp_path / "t.log")
        assert warnings == []
        assert h.head.version == 5
        c = h.commit(random_state(spec, random.Random(77)), "later", "ui", 1)
        assert c.version == 6


class TestLogBytes:
    def test_log_is_exactly_reencoded_commits(self, tmp_path, spec):
        """The on-disk log must be the canonical encoding of its commits,
        nothing more; this is what makes export/import byte-stable."""
        h = build_history(tmp_path, spec, 8)
        expected = b"".join(encode_commit(c) + b"\n" for c in h.commits)
        assert (tmp_path / "t.log").read_bytes() == expected

"""Job queue ordering: per-project FIFO, pair blocking, failure isolation."""

import threading
import time

import pytest

from dedit.errors import NotFoundError
from dedit.jobs import JobQueue


def wait_done(q, *jobs, timeout=5.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if all(j.status in ("done", "failed") for j in jobs):
            return
        time.sleep(0.005)
    raise AssertionError(
        f"jobs stuck: {[(j.id, j.status) for j in jobs]}")


@pytest.fixture()
def q():
    queue = JobQueue(max_workers=4)
    yield queue
    queue.shutdown()


def test_same_project_jobs_never_overlap(q):
    release = threading.Event()
    j1 = q.submit(["a"], "edit", lambda job: release.wait(5))
    j2 = q.submit(["a"], "edit", lambda job: None)
    time.sleep(0.05)
    assert q.poll(j1.id).status == "running"
    assert q.poll(j2.id).status == "queued"
    release.set()
    wait_done(q, j1, j2)
    assert j1.finished_seq < j2.finished_seq


def test_different_projects_run_in_parallel(q):
    release = threading.Event()
    j1 = q.submit(["a"], "edit", lambda job: release.wait(5))
    j2 = q.submit(["b"], "edit", lambda job: None)
    wait_done(q, j2)
    assert q.poll(j1.id).status == "running"
    release.set()
    wait_done(q, j1)


def test_pair_job_waits_for_both_projects_and_blocks_both(q):
    release = threading.Event()
    j1 = q.submit(["a"], "edit", lambda job: release.wait(5))
    jp = q.submit(["a", "b"], "pair", lambda job: None)
    # b is idle, but its queue head is the pair job, which is stuck
    # behind a; a later b-only job must not jump the line
    j3 = q.submit(["b"], "edit", lambda job: None)
    time.sleep(0.05)
    assert jp.status == "queued" and j3.status == "queued"
    release.set()
    wait_done(q, j1, jp, j3)
    assert j1.finished_seq < jp.finished_seq < j3.finished_seq


def test_failure_records_error_and_frees_the_queue(q):
    def boom(job):
        raise ValueError("bad input")

    j1 = q.submit(["a"], "edit", boom)
    j2 = q.submit(["a"], "edit", lambda job: job.result_ids.append("r"))
    wait_done(q, j1, j2)
    assert j1.status == "failed"
    assert j1.error == "ValueError: bad input"
    assert j2.status == "done" and j2.result_ids == ["r"]


def test_poll_unknown_job(q):
    with pytest.raises(NotFoundError, match="j9999"):
        q.poll("j9999")

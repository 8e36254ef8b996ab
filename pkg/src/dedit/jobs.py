"""In-process job queue: FIFO per project, bounded worker pool.

Jobs touching one project never interleave; a pair job waits until it
is at the head of every queue it belongs to, so cross-project work
serializes without locks in the work functions themselves.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

from .errors import NotFoundError

JOB_KINDS = ("finetune", "pair", "edit")


@dataclass
class Job:
    id: str
    kind: str
    project_ids: List[str]
    fn: Callable[["Job"], None]
    status: str = "queued"
    error: str = ""
    result_ids: List[str] = field(default_factory=list)
    loss_trace: Optional[List[Tuple[int, float]]] = None
    finished_seq: int = -1  # global completion order, -1 while unfinished


class JobQueue:
    def __init__(self, max_workers: int = 2):
        self._lock = threading.Lock()
        self._jobs: Dict[str, Job] = {}
        self._queues: Dict[str, deque] = {}
        self._busy: Set[str] = set()
        self._pool = ThreadPoolExecutor(max_workers=max_workers)
        self._ids = itertools.count(1)
        self._finish = itertools.count(1)

    def submit(self, project_ids: List[str], kind: str,
               fn: Callable[[Job], None]) -> Job:
        with self._lock:
            job = Job(id=f"j{next(self._ids):04d}", kind=kind,
                      project_ids=list(project_ids), fn=fn)
            self._jobs[job.id] = job
            for pid in job.project_ids:
                self._queues.setdefault(pid, deque()).append(job.id)
            self._kick()
        return job

    def poll(self, job_id: str) -> Job:
        job = self._jobs.get(job_id)
        if job is None:
            raise NotFoundError(f"no job {job_id!r}")
        return job

    def _kick(self) -> None:
        # caller holds the lock; start every job whose projects are all
        # free and which heads all of its queues
        progressed = True
        while progressed:
            progressed = False
            for pid, q in self._queues.items():
                if not q or pid in self._busy:
                    continue
                job = self._jobs[q[0]]
                ready = all(p not in self._busy and self._queues[p][0] == job.id
                            for p in job.project_ids)
                if not ready:
                    continue
                for p in job.project_ids:
                    self._queues[p].popleft()
                    self._busy.add(p)
                job.status = "running"
                self._pool.submit(self._run, job)
                progressed = True
                break

    def _run(self, job: Job) -> None:
        try:
            job.fn(job)
            job.status = "done"
        except Exception as e:  # job failures surface through poll, not logs
            job.error = f"{type(e).__name__}: {e}"
            job.status = "failed"
        finally:
            job.finished_seq = next(self._finish)
            with self._lock:
                for p in job.project_ids:
                    self._busy.discard(p)
                self._kick()

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)

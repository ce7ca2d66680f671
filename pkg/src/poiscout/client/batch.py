"""Batch attribute-extraction jobs: submit, poll, fetch results.

Wire protocol (JSON over HTTP):

* ``POST /batches`` with ``{"prompt_id": str, "image_ids": [str, ...]}``
  returns ``{"job_id": str, "state": "submitted"}``.
* ``GET /batches/<job_id>`` returns ``{"job_id", "state", "result_path"?, "reason"?}``.
* ``GET <result_path>`` returns the attribute JSONL as text.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..errors import ClientError, JobStateError, ValidationError
from ..ingest import ParseResult, parse_attribute_lines
from .http import ApiSession, ClientConfig

MAX_BATCH_IMAGES = 50_000
STATES = ("submitted", "running", "completed", "failed")
_NEXT = {
    "submitted": {"submitted", "running"},
    "running": {"running", "completed", "failed"},
    "completed": {"completed"},
    "failed": {"failed"},
}


@dataclass(frozen=True)
class BatchJob:
    job_id: str
    state: str
    submitted_count: int
    result_path: str | None = None
    reason: str | None = None

    def __post_init__(self) -> None:
        if self.state not in STATES:
            raise ValidationError(f"unknown job state {self.state!r}")
        if (self.result_path is not None) != (self.state == "completed"):
            raise ValidationError("result_path must be set exactly when the job is completed")

    @property
    def done(self) -> bool:
        return self.state in ("completed", "failed")


def check_transition(old: str, new: str) -> None:
    if new not in _NEXT[old]:
        raise JobStateError(f"illegal job transition {old} -> {new}")


class BatchClient:
    def __init__(self, cfg: ClientConfig, session: ApiSession | None = None, **session_kwargs: Any):
        self.cfg = cfg
        self.session = session or ApiSession(cfg, **session_kwargs)

    def submit_attribute_batch(self, image_manifest: list[str], prompt_id: str) -> BatchJob:
        n = len(image_manifest)
        if n == 0:
            raise ValidationError("image manifest is empty")
        if n > MAX_BATCH_IMAGES:
            raise ValidationError(f"manifest has {n} images; a batch holds at most {MAX_BATCH_IMAGES}")
        body = self.session.request("POST", "/batches", body={"prompt_id": prompt_id, "image_ids": list(image_manifest)}).body
        try:
            job_id, state = body["job_id"], body.get("state", "submitted")
        except (KeyError, TypeError):
            raise ClientError("malformed submit response") from None
        if state != "submitted":
            raise JobStateError(f"new job reported state {state!r}")
        return BatchJob(str(job_id), "submitted", n)

    def poll_batch(self, job: BatchJob) -> BatchJob:
        try:
            body = self.session.request("GET", f"/batches/{job.job_id}").body
        except ClientError as exc:
            if exc.status == 404:
                raise JobStateError(f"unknown job_id {job.job_id!r}", status=404) from None
            raise
        if not isinstance(body, dict) or body.get("state") not in STATES:
            raise ClientError(f"malformed poll response for {job.job_id}")
        state = body["state"]
        check_transition(job.state, state)
        if state == "completed" and not body.get("result_path"):
            raise ClientError(f"job {job.job_id} completed without a result_path")
        return BatchJob(
            job.job_id,
            state,
            job.submitted_count,
            result_path=body.get("result_path") if state == "completed" else None,
            reason=body.get("reason") if state == "failed" else None,
        )

    def wait(self, job: BatchJob, interval_s: float = 30.0, max_polls: int = 10_000) -> BatchJob:
        for _ in range(max_polls):
            job = self.poll_batch(job)
            if job.done:
                return job
            self.session.clock.sleep(interval_s)
        raise JobStateError(f"job {job.job_id} still {job.state} after {max_polls} polls")

    def fetch_batch_results(self, job: BatchJob, dest: str | Path | None = None) -> ParseResult:
        """Download a completed job's JSONL and parse it leniently."""
        if job.state != "completed" or job.result_path is None:
            raise JobStateError(f"job {job.job_id} is {job.state}, not completed")
        resp = self.session.request("GET", job.result_path)
        text = resp.text
        if text is None:
            if isinstance(resp.body, str):
                text = resp.body
            else:
                raise ClientError(f"result for {job.job_id} is not JSONL text")
        if dest is not None:
            Path(dest).write_text(text, encoding="utf-8")
        return parse_attribute_lines(text.splitlines(), strict=False)

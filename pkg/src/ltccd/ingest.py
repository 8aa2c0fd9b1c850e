"""Client for an on-demand InSAR-processing job service.

One job per stack-plan pair: submit, poll with exponential backoff until
terminal, download and checksum the product. All job state is persisted in
a plan-scoped manifest so a completed plan re-runs without any network
traffic. Pair failures are reported, not raised; the stack-size floor is
enforced downstream where the stack is reduced.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import requests

from .catalog import InsarPair, StackPlan
from .errors import CredentialError, EmptyStackError, IntegrityError

log = logging.getLogger(__name__)

ENV_URL = "LTCCD_API_URL"
ENV_TOKEN = "LTCCD_API_TOKEN"

PENDING = "pending"
RUNNING = "running"
SUCCEEDED = "succeeded"
FAILED = "failed"
TERMINAL = (SUCCEEDED, FAILED)


@dataclass(frozen=True)
class JobRequest:
    """Submission payload for one interferometric pair."""

    pair: InsarPair
    looks: str = "10x2"
    product: str = "coherence"

    def payload(self) -> dict:
        return {
            "job_type": "INSAR",
            "reference": self.pair.reference,
            "secondary": self.pair.secondary,
            "looks": self.looks,
        }


@dataclass
class JobStatus:
    """Service-side view of one job."""

    job_id: str
    state: str
    product_url: Optional[str] = None
    attempts: int = 0

    def __post_init__(self):
        if self.state not in (PENDING, RUNNING, SUCCEEDED, FAILED):
            raise ValueError(f"unknown job state {self.state!r}")
        if (self.product_url is not None) != (self.state == SUCCEEDED):
            raise ValueError("product_url present iff state is succeeded")


@dataclass
class PairOutcome:
    """Terminal result for one pair: a local product path or a failure note."""

    pair_key: str
    state: str
    path: Optional[str] = None
    sha256: Optional[str] = None
    job_id: Optional[str] = None
    attempts: int = 0
    error: Optional[str] = None


@dataclass(frozen=True)
class ProcessOptions:
    max_concurrent: int = 4
    max_retries: int = 2
    poll_initial_s: float = 5.0
    poll_cap_s: float = 120.0
    looks: str = "10x2"
    timeout_s: float = 30.0


def pair_key(pair: InsarPair) -> str:
    return f"{pair.reference}__{pair.secondary}"


def _auth_headers(token: Optional[str]) -> dict:
    return {"Authorization": f"Bearer {token}"} if token else {}


def _submit(session, endpoint, token, request: JobRequest, timeout: float) -> str:
    resp = session.post(
        f"{endpoint}/jobs",
        json=request.payload(),
        headers=_auth_headers(token),
        timeout=timeout,
    )
    if resp.status_code in (401, 403):
        raise CredentialError(f"job service rejected credentials ({resp.status_code})")
    resp.raise_for_status()
    return str(resp.json()["job_id"])


def _poll(session, endpoint, token, job_id, options: ProcessOptions) -> dict:
    delay = options.poll_initial_s
    while True:
        resp = session.get(
            f"{endpoint}/jobs/{job_id}",
            headers=_auth_headers(token),
            timeout=options.timeout_s,
        )
        if resp.status_code in (401, 403):
            raise CredentialError(f"job service rejected credentials ({resp.status_code})")
        resp.raise_for_status()
        status = resp.json()
        if status["state"] in TERMINAL:
            return status
        time.sleep(delay)
        delay = min(delay * 2.0, options.poll_cap_s)


def _download(session, token, url, dest: Path, timeout: float) -> str:
    resp = session.get(url, headers=_auth_headers(token), timeout=timeout)
    resp.raise_for_status()
    dest.write_bytes(resp.content)
    return hashlib.sha256(resp.content).hexdigest()


def _run_pair(
    endpoint: str,
    token: Optional[str],
    pair: InsarPair,
    dest_dir: Path,
    options: ProcessOptions,
) -> PairOutcome:
    key = pair_key(pair)
    request = JobRequest(pair=pair, looks=options.looks)
    session = requests.Session()
    attempts = 0
    last_job = None
    try:
        while attempts <= options.max_retries:
            attempts += 1
            last_job = _submit(session, endpoint, token, request, options.timeout_s)
            status = _poll(session, endpoint, token, last_job, options)
            if status["state"] != SUCCEEDED:
                log.warning("job %s for %s failed (attempt %d)", last_job, key, attempts)
                continue
            dest = dest_dir / f"{key}.tif"
            digest = _download(session, token, status["product_url"], dest, options.timeout_s)
            expected = status.get("sha256")
            if expected and digest != expected:
                log.warning("checksum mismatch for %s, re-downloading once", key)
                digest = _download(session, token, status["product_url"], dest, options.timeout_s)
                if digest != expected:
                    raise IntegrityError(
                        f"product for {key} failed checksum twice "
                        f"(expected {expected}, got {digest})"
                    )
            return PairOutcome(
                pair_key=key, state=SUCCEEDED, path=str(dest),
                sha256=digest, job_id=last_job, attempts=attempts,
            )
        return PairOutcome(
            pair_key=key, state=FAILED, job_id=last_job, attempts=attempts,
            error=f"job failed after {attempts} attempts",
        )
    finally:
        session.close()


def manifest_path(plan: StackPlan, dest_dir) -> Path:
    return Path(dest_dir) / f"{plan.epoch}_{plan.timestep_date.isoformat()}.manifest.json"


def _load_manifest(path: Path) -> dict:
    if path.exists():
        with open(path) as fh:
            return json.load(fh)
    return {"jobs": {}}


def _reusable(entry: dict) -> bool:
    if entry.get("state") != SUCCEEDED or not entry.get("path"):
        return False
    product = Path(entry["path"])
    if not product.exists():
        return False
    digest = hashlib.sha256(product.read_bytes()).hexdigest()
    return digest == entry.get("sha256")


def process_pairs(
    plan: StackPlan,
    dest_dir,
    endpoint: Optional[str] = None,
    token: Optional[str] = None,
    options: ProcessOptions = ProcessOptions(),
) -> dict[str, PairOutcome]:
    """Turn a stack plan into local coherence products.

    Previously succeeded pairs recorded in the manifest are reused without
    any network traffic; remaining pairs run with at most
    options.max_concurrent jobs in flight. Raises CredentialError on
    rejected credentials, IntegrityError on repeated checksum failure, and
    EmptyStackError when no pair succeeds at all.
    """
    endpoint = (endpoint or os.environ.get(ENV_URL, "")).rstrip("/")
    if not endpoint:
        raise CredentialError(f"no job-service endpoint configured ({ENV_URL} unset)")
    token = token if token is not None else os.environ.get(ENV_TOKEN)
    dest_dir = Path(dest_dir)
    dest_dir.mkdir(parents=True, exist_ok=True)

    mpath = manifest_path(plan, dest_dir)
    manifest = _load_manifest(mpath)
    outcomes: dict[str, PairOutcome] = {}
    todo = []
    for pair in plan.pairs:
        key = pair_key(pair)
        entry = manifest["jobs"].get(key)
        if entry and _reusable(entry):
            outcomes[key] = PairOutcome(pair_key=key, **{
                k: entry.get(k) for k in ("state", "path", "sha256", "job_id", "attempts")
            })
        else:
            todo.append(pair)

    if todo:
        with ThreadPoolExecutor(max_workers=options.max_concurrent) as pool:
            futures = [
                pool.submit(_run_pair, endpoint, token, pair, dest_dir, options)
                for pair in todo
            ]
            for future in futures:
                outcome = future.result()
                outcomes[outcome.pair_key] = outcome

    manifest = {
        "plan": {"epoch": plan.epoch, "reference": plan.reference,
                 "timestep_date": plan.timestep_date.isoformat()},
        "jobs": {
            key: {
                "state": o.state, "path": o.path, "sha256": o.sha256,
                "job_id": o.job_id, "attempts": o.attempts, "error": o.error,
            }
            for key, o in sorted(outcomes.items())
        },
    }
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    if not any(o.state == SUCCEEDED for o in outcomes.values()):
        raise EmptyStackError(
            f"all {len(outcomes)} pairs failed for plan {plan.epoch} "
            f"{plan.timestep_date.isoformat()}"
        )
    return outcomes

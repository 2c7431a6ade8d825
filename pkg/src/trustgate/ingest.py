"""Taxon-filtered image ingestion: manifest planning, concurrent download
with resume, and checksum verification.

The flow mirrors how large citizen-science image sets are actually pulled:

1. ``filter_taxa`` selects the taxa of one rank under a clade root.
2. ``build_manifest`` turns a photo listing into a deterministic, deduplicated
   download plan, persisted as one JSON line per record.
3. ``download`` fetches with a bounded thread pool, token-bucket rate
   limiting and exponential-backoff retries, journaling every state change
   to an append-only sidecar so an interrupted run resumes without
   refetching anything already done.
4. ``verify`` re-hashes the tree against the recorded SHA-256 checksums.

The photo id, not the URL, is the identity of a record: files land at
``<dest_root>/<taxon_id>/<photo_id>.<ext>`` and the URL is derived from a
configurable base (env var ``TRUSTGATE_BASE_URL`` overrides the default
public object store).
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import tempfile
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import requests

from .core import Rank, Taxonomy
from .errors import (
    InvalidArgumentError,
    InvalidInputError,
    ParseError,
    TrustgateError,
)

DEFAULT_BASE_URL = "https://inaturalist-open-data.s3.amazonaws.com"
BASE_URL_ENV_VAR = "TRUSTGATE_BASE_URL"
URL_TEMPLATE = "{base}/photos/{photo_id}/original.{ext}"
ALLOWED_EXTENSIONS = ("jpg", "jpeg", "png")

DEFAULT_CONCURRENCY = 4
DEFAULT_RATE_LIMIT = 20.0
DEFAULT_MAX_ATTEMPTS = 3
DEFAULT_BACKOFF_BASE = 0.25
DEFAULT_TIMEOUT = 30.0

# HTTP statuses worth retrying; everything else (404 and friends) is a
# permanent failure for the record.
RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})

_MANIFEST_FORMAT = "trustgate-download-manifest"
_FORMAT_VERSION = 1


class QualityGrade(enum.Enum):
    RESEARCH = "research"
    NEEDS_ID = "needs_id"
    CASUAL = "casual"

    @classmethod
    def parse(cls, text: str) -> "QualityGrade":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise InvalidInputError(
                f"unknown quality grade {text!r}; expected one of "
                f"{[g.value for g in cls]}") from None


class RecordState(enum.Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


@dataclass(frozen=True)
class PhotoRecord:
    """One downloadable photo."""

    photo_id: int
    taxon_id: int
    extension: str
    quality_grade: QualityGrade
    license: str = ""

    def __post_init__(self) -> None:
        if self.extension not in ALLOWED_EXTENSIONS:
            raise InvalidInputError(
                f"extension {self.extension!r} not in {ALLOWED_EXTENSIONS} "
                f"(must be lowercase)")
        if self.photo_id < 0 or self.taxon_id < 0:
            raise InvalidInputError("photo_id and taxon_id must be non-negative")
        if not isinstance(self.quality_grade, QualityGrade):
            # accept the string form so CSV-shaped callers can't silently
            # construct records that no quality filter will ever match
            object.__setattr__(self, "quality_grade",
                               QualityGrade.parse(str(self.quality_grade)))

    def url(self, base_url: str) -> str:
        return URL_TEMPLATE.format(base=base_url.rstrip("/"),
                                   photo_id=self.photo_id, ext=self.extension)

    def relative_path(self) -> Path:
        return Path(str(self.taxon_id)) / f"{self.photo_id}.{self.extension}"


@dataclass
class RecordStatus:
    state: RecordState = RecordState.PENDING
    checksum: str | None = None
    reason: str | None = None
    attempts: int = 0


class DownloadManifest:
    """An ordered download plan plus the per-record state of one run.

    Records are immutable once planned; the only mutation is the
    pending -> done/failed state machine, and ``done`` is terminal.
    """

    def __init__(self, records: Sequence[PhotoRecord],
                 filter_description: dict | None = None,
                 duplicates_dropped: int = 0) -> None:
        self.records: tuple[PhotoRecord, ...] = tuple(records)
        self.filter_description = dict(filter_description or {})
        self.duplicates_dropped = duplicates_dropped
        seen: set[int] = set()
        for rec in self.records:
            if rec.photo_id in seen:
                raise InvalidInputError(f"duplicate photo_id {rec.photo_id} in manifest")
            seen.add(rec.photo_id)
        self._status: dict[int, RecordStatus] = {
            rec.photo_id: RecordStatus() for rec in self.records}

    def __len__(self) -> int:
        return len(self.records)

    def status(self, photo_id: int) -> RecordStatus:
        return self._status[photo_id]

    def mark_done(self, photo_id: int, checksum: str, attempts: int = 1) -> None:
        status = self._status[photo_id]
        if status.state is RecordState.DONE:
            raise InvalidArgumentError(f"photo {photo_id} is already done")
        self._status[photo_id] = RecordStatus(state=RecordState.DONE, checksum=checksum,
                                              attempts=attempts)

    def mark_failed(self, photo_id: int, reason: str, attempts: int) -> None:
        status = self._status[photo_id]
        if status.state is RecordState.DONE:
            raise InvalidArgumentError(f"photo {photo_id} is already done")
        self._status[photo_id] = RecordStatus(state=RecordState.FAILED, reason=reason,
                                              attempts=attempts)

    def reset_failed(self) -> None:
        """Put failed records back to pending so a rerun retries them."""
        for photo_id, status in self._status.items():
            if status.state is RecordState.FAILED:
                self._status[photo_id] = RecordStatus()

    def records_in(self, state: RecordState) -> list[PhotoRecord]:
        return [rec for rec in self.records
                if self._status[rec.photo_id].state is state]

    @property
    def is_complete(self) -> bool:
        return all(s.state is RecordState.DONE for s in self._status.values())

    def state_counts(self) -> dict[str, int]:
        counts = {state.value: 0 for state in RecordState}
        for status in self._status.values():
            counts[status.state.value] += 1
        return counts


def filter_taxa(taxonomy: Taxonomy, clade_root: int, rank: Rank) -> set[int]:
    """Ids of all taxa at ``rank`` that sit under (or are) ``clade_root``."""
    taxonomy.get(clade_root)  # raises NotFoundError for unknown roots
    return {rec.taxon_id for rec in taxonomy
            if rec.rank is rank and rec.is_descendant_of(clade_root)}


def build_manifest(photos: Iterable[PhotoRecord], taxa_filter: set[int],
                   quality: QualityGrade | Iterable[QualityGrade] | None = None,
                   *, filter_description: dict | None = None) -> DownloadManifest:
    """Plan a download: filter, dedupe, and order by (taxon_id, photo_id).

    ``quality`` may be a single grade, a collection of grades, or None for
    no quality filtering. Duplicate photo ids keep their first occurrence
    and are counted plus warned about.
    """
    if quality is None:
        allowed = set(QualityGrade)
    elif isinstance(quality, QualityGrade):
        allowed = {quality}
    else:
        allowed = set(quality)
    kept: dict[int, PhotoRecord] = {}
    duplicates = 0
    for rec in photos:
        if rec.taxon_id not in taxa_filter or rec.quality_grade not in allowed:
            continue
        if rec.photo_id in kept:
            duplicates += 1
            continue
        kept[rec.photo_id] = rec
    if duplicates:
        warnings.warn(f"dropped {duplicates} duplicate photo id(s) from the plan",
                      stacklevel=2)
    ordered = sorted(kept.values(), key=lambda r: (r.taxon_id, r.photo_id))
    description = dict(filter_description or {})
    description.setdefault("quality", sorted(g.value for g in allowed))
    return DownloadManifest(ordered, description, duplicates_dropped=duplicates)


# ---------------------------------------------------------------------------
# photo listing CSV

_PHOTOS_HEADER = ["photo_id", "taxon_id", "extension", "quality_grade", "license"]


def read_photos_csv(path: str) -> list[PhotoRecord]:
    import csv

    records: list[PhotoRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", path=path, line=1) from None
        if header != _PHOTOS_HEADER:
            raise ParseError(f"bad header {header!r}, expected {_PHOTOS_HEADER}",
                             path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 columns, got {len(row)}", path=path, line=lineno)
            try:
                records.append(PhotoRecord(
                    photo_id=int(row[0]), taxon_id=int(row[1]), extension=row[2],
                    quality_grade=QualityGrade.parse(row[3]), license=row[4]))
            except ValueError:
                raise ParseError("photo_id and taxon_id must be integers",
                                 path=path, line=lineno) from None
            except InvalidInputError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    return records


# ---------------------------------------------------------------------------
# manifest persistence: header + one record line, with an append-only
# sidecar journal (<manifest>.state) for state changes

def journal_path_for(manifest_path: str) -> str:
    return str(manifest_path) + ".state"


def write_manifest(manifest: DownloadManifest, path: str) -> None:
    """Write the plan atomically; any stale state journal is removed.

    Re-planning starts a fresh run, so a journal belonging to a previous
    plan must not be replayed onto the new one.
    """
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            header = {
                "format": _MANIFEST_FORMAT,
                "version": _FORMAT_VERSION,
                "filter": manifest.filter_description,
                "record_count": len(manifest),
                "duplicates_dropped": manifest.duplicates_dropped,
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in manifest.records:
                fh.write(json.dumps({
                    "photo_id": rec.photo_id,
                    "taxon_id": rec.taxon_id,
                    "extension": rec.extension,
                    "quality_grade": rec.quality_grade.value,
                    "license": rec.license,
                }, sort_keys=True) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    journal = journal_path_for(path)
    if os.path.exists(journal):
        os.unlink(journal)


def load_manifest(path: str) -> DownloadManifest:
    """Read a plan and replay its journal, if one exists.

    The journal is append-only; a crash can leave a truncated final line,
    which is ignored. Later entries win over earlier ones.
    """
    records: list[PhotoRecord] = []
    with open(path) as fh:
        first = fh.readline()
        if not first.strip():
            raise ParseError("empty file, expected a manifest header", path=path, line=1)
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid header JSON: {exc}", path=path, line=1) from exc
        if not isinstance(header, dict) or header.get("format") != _MANIFEST_FORMAT:
            raise ParseError("not a download manifest", path=path, line=1)
        if header.get("version") != _FORMAT_VERSION:
            raise ParseError(f"unsupported version {header.get('version')!r}",
                             path=path, line=1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                records.append(PhotoRecord(
                    photo_id=int(doc["photo_id"]), taxon_id=int(doc["taxon_id"]),
                    extension=str(doc["extension"]),
                    quality_grade=QualityGrade.parse(str(doc["quality_grade"])),
                    license=str(doc.get("license", ""))))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"bad record line: {exc}", path=path, line=lineno) from exc
            except InvalidInputError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    manifest = DownloadManifest(
        records, header.get("filter") or {},
        duplicates_dropped=int(header.get("duplicates_dropped", 0)))

    journal = journal_path_for(path)
    if os.path.exists(journal):
        _replay_journal(manifest, journal)
    return manifest


def _replay_journal(manifest: DownloadManifest, journal: str) -> None:
    known = {rec.photo_id for rec in manifest.records}
    with open(journal) as fh:
        lines = fh.readlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break  # torn final write from a crash; everything before it holds
            raise ParseError("corrupt journal entry", path=journal, line=i + 1) from None
        photo_id = doc.get("photo_id")
        if photo_id not in known:
            continue  # journal from a superseded plan; ignore unknown ids
        state = doc.get("state")
        if state == RecordState.DONE.value:
            manifest._status[photo_id] = RecordStatus(
                state=RecordState.DONE, checksum=doc.get("checksum"),
                attempts=int(doc.get("attempts", 1)))
        elif state == RecordState.FAILED.value:
            manifest._status[photo_id] = RecordStatus(
                state=RecordState.FAILED, reason=doc.get("reason"),
                attempts=int(doc.get("attempts", 1)))
        elif state == RecordState.PENDING.value:
            manifest._status[photo_id] = RecordStatus()


class _Journal:
    """Single-writer append-only journal with durable per-line writes."""

    def __init__(self, path: str | None) -> None:
        self._fh = open(path, "a") if path else None

    def append(self, photo_id: int, status: RecordStatus) -> None:
        if self._fh is None:
            return
        doc: dict = {"photo_id": photo_id, "state": status.state.value}
        if status.checksum is not None:
            doc["checksum"] = status.checksum
        if status.reason is not None:
            doc["reason"] = status.reason
        doc["attempts"] = status.attempts
        self._fh.write(json.dumps(doc, sort_keys=True) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()


class _TokenBucket:
    """Classic token bucket; capacity is one second's worth of tokens.

    The bucket starts empty, so the observed request rate never exceeds the
    configured limit even at startup; after an idle second at most one
    extra second of requests can burst through.
    """

    def __init__(self, rate: float) -> None:
        if not rate > 0:
            raise InvalidArgumentError(f"rate must be > 0, got {rate!r}")
        self.rate = float(rate)
        self.capacity = float(rate)
        self._tokens = 0.0
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


@dataclass
class _WorkResult:
    photo_id: int
    status: RecordStatus
    fatal: BaseException | None = None


def resolve_base_url(base_url: str | None = None) -> str:
    if base_url:
        return base_url
    return os.environ.get(BASE_URL_ENV_VAR) or DEFAULT_BASE_URL


def _download_one(record: PhotoRecord, base_url: str, dest_root: Path,
                  bucket: _TokenBucket, stop: threading.Event,
                  session: requests.Session, *, max_attempts: int,
                  backoff_base: float, timeout: float) -> _WorkResult:
    url = record.url(base_url)
    final_path = dest_root / record.relative_path()
    last_reason = "not attempted"
    for attempt in range(1, max_attempts + 1):
        if stop.is_set():
            return _WorkResult(record.photo_id, RecordStatus(attempts=attempt - 1))
        bucket.acquire()
        try:
            response = session.get(url, timeout=timeout, stream=True)
        except requests.RequestException as exc:
            last_reason = f"connection error: {exc.__class__.__name__}"
            if attempt < max_attempts:
                time.sleep(backoff_base * (2 ** (attempt - 1)))
            continue
        with response:
            if response.status_code == 200:
                try:
                    checksum = _write_atomic(response, final_path)
                except OSError as exc:
                    # Disk trouble is fatal for the whole run, not just
                    # this record; surface it so the caller can abort.
                    return _WorkResult(record.photo_id,
                                       RecordStatus(attempts=attempt), fatal=exc)
                return _WorkResult(record.photo_id, RecordStatus(
                    state=RecordState.DONE, checksum=checksum, attempts=attempt))
            last_reason = f"HTTP {response.status_code}"
            if response.status_code not in RETRYABLE_STATUSES:
                return _WorkResult(record.photo_id, RecordStatus(
                    state=RecordState.FAILED, reason=last_reason, attempts=attempt))
        if attempt < max_attempts:
            time.sleep(backoff_base * (2 ** (attempt - 1)))
    return _WorkResult(record.photo_id, RecordStatus(
        state=RecordState.FAILED, reason=last_reason, attempts=max_attempts))


def _write_atomic(response: requests.Response, final_path: Path) -> str:
    final_path.parent.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256()
    fd, tmp = tempfile.mkstemp(prefix=f".{final_path.name}.", dir=final_path.parent)
    try:
        with os.fdopen(fd, "wb") as out:
            for chunk in response.iter_content(chunk_size=65536):
                digest.update(chunk)
                out.write(chunk)
            out.flush()
            os.fsync(out.fileno())
        os.replace(tmp, final_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return digest.hexdigest()


def download(manifest: DownloadManifest, dest_root: str | os.PathLike, *,
             base_url: str | None = None,
             concurrency: int = DEFAULT_CONCURRENCY,
             rate_limit: float = DEFAULT_RATE_LIMIT,
             max_attempts: int = DEFAULT_MAX_ATTEMPTS,
             backoff_base: float = DEFAULT_BACKOFF_BASE,
             timeout: float = DEFAULT_TIMEOUT,
             journal_path: str | None = None,
             retry_failed: bool = True) -> DownloadManifest:
    """Fetch every pending record; mutate and return the manifest.

    At most ``concurrency`` transfers are in flight and requests respect the
    token-bucket ``rate_limit``. Records already done are never refetched
    (rerunning a complete manifest performs zero requests). Previously
    failed records are retried unless ``retry_failed`` is false. Every state
    change is appended to ``journal_path`` before the run moves on, so a
    crash at any point leaves a resumable manifest. A filesystem error
    aborts the whole run (journal intact) rather than burning through the
    remaining records.
    """
    if concurrency < 1:
        raise InvalidArgumentError(f"concurrency must be >= 1, got {concurrency}")
    if max_attempts < 1:
        raise InvalidArgumentError(f"max_attempts must be >= 1, got {max_attempts}")
    dest = Path(dest_root)
    dest.mkdir(parents=True, exist_ok=True)
    base = resolve_base_url(base_url)

    if retry_failed:
        manifest.reset_failed()
    todo = manifest.records_in(RecordState.PENDING)
    journal = _Journal(journal_path)
    if not todo:
        journal.close()
        return manifest

    bucket = _TokenBucket(rate_limit)
    stop = threading.Event()
    local = threading.local()

    def session_for_thread() -> requests.Session:
        if not hasattr(local, "session"):
            local.session = requests.Session()
        return local.session

    def work(record: PhotoRecord) -> _WorkResult:
        return _download_one(record, base, dest, bucket, stop, session_for_thread(),
                             max_attempts=max_attempts, backoff_base=backoff_base,
                             timeout=timeout)

    fatal: BaseException | None = None
    try:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            futures = {pool.submit(work, rec): rec for rec in todo}
            for future in as_completed(futures):
                result = future.result()
                if result.fatal is not None:
                    fatal = fatal or result.fatal
                    stop.set()
                    continue
                if result.status.state is RecordState.DONE:
                    manifest.mark_done(result.photo_id, result.status.checksum,
                                       result.status.attempts)
                    journal.append(result.photo_id, manifest.status(result.photo_id))
                elif result.status.state is RecordState.FAILED:
                    manifest.mark_failed(result.photo_id, result.status.reason or "failed",
                                         result.status.attempts)
                    journal.append(result.photo_id, manifest.status(result.photo_id))
                # PENDING results are skipped records after a stop; no journal entry.
    finally:
        journal.close()
    if fatal is not None:
        raise TrustgateError(f"download aborted: {fatal}") from fatal
    return manifest


@dataclass(frozen=True)
class VerifyReport:
    ok: int
    corrupt: int
    missing: int
    corrupt_ids: tuple[int, ...] = field(default=())
    missing_ids: tuple[int, ...] = field(default=())

    @property
    def clean(self) -> bool:
        return self.corrupt == 0 and self.missing == 0


def verify(manifest: DownloadManifest, dest_root: str | os.PathLike) -> VerifyReport:
    """Re-hash every done record's file against its recorded checksum."""
    dest = Path(dest_root)
    ok = 0
    corrupt: list[int] = []
    missing: list[int] = []
    for rec in manifest.records_in(RecordState.DONE):
        path = dest / rec.relative_path()
        if not path.is_file():
            missing.append(rec.photo_id)
            continue
        digest = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(65536), b""):
                digest.update(chunk)
        if digest.hexdigest() == manifest.status(rec.photo_id).checksum:
            ok += 1
        else:
            corrupt.append(rec.photo_id)
    return VerifyReport(ok=ok, corrupt=len(corrupt), missing=len(missing),
                        corrupt_ids=tuple(corrupt), missing_ids=tuple(missing))

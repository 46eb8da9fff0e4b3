"""Interaction-log ingestion, k-core filtering, leave-one-out splits, batching.

Dense item ids start at 1; id 0 is reserved for left padding throughout.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .numkernel.rng import RngStream, Substream

log = logging.getLogger(__name__)

CACHE_MAGIC = b"BASD"
CACHE_VERSION = 1


@dataclass
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int


@dataclass
class IngestResult:
    records: list[InteractionRecord]
    malformed: int
    total_lines: int


@dataclass
class DatasetStats:
    users: int
    items: int
    interactions: int
    avg_length: float
    sparsity: float

    def to_text(self) -> str:
        return "\n".join(
            [
                f"users = {self.users}",
                f"items = {self.items}",
                f"interactions = {self.interactions}",
                f"avg_length = {self.avg_length!r}",
                f"sparsity = {self.sparsity!r}",
            ]
        )


@dataclass
class InteractionDataset:
    """Chronological per-user sequences with implicit leave-one-out markers.

    After split_leave_one_out: per user, the last item is the test target,
    the second-to-last the validation target, the rest the training prefix.
    """

    n_users: int
    n_items: int
    sequences: list[np.ndarray]
    split_done: bool = False
    dropped_users: int = field(default=0)

    def train_prefix(self, u: int) -> np.ndarray:
        return self.sequences[u][:-2]

    def val_target(self, u: int) -> int:
        return int(self.sequences[u][-2])

    def test_target(self, u: int) -> int:
        return int(self.sequences[u][-1])

    def val_input(self, u: int) -> np.ndarray:
        return self.sequences[u][:-2]

    def test_input(self, u: int) -> np.ndarray:
        return self.sequences[u][:-1]

    def stats(self) -> DatasetStats:
        inter = int(sum(len(s) for s in self.sequences))
        lengths = [len(s) for s in self.sequences]
        avg = float(np.mean(lengths)) if lengths else 0.0
        sparsity = 1.0 - inter / (self.n_users * self.n_items) if self.n_users and self.n_items else 0.0
        return DatasetStats(self.n_users, self.n_items, inter, avg, sparsity)


@dataclass
class SequenceBatch:
    input_ids: np.ndarray  # (B, N) int32, left-padded with 0
    pos_ids: np.ndarray  # (B, N) int32, next-item targets, 0 at pad
    neg_ids: np.ndarray  # (B, N) int32, sampled negatives, 0 at pad
    mask: np.ndarray  # (B, N) bool, true exactly where input_ids != 0
    user_ids: np.ndarray  # (B,) int32, dense user indices

    @property
    def size(self) -> int:
        return self.input_ids.shape[0]


# -- ingestion ---------------------------------------------------------------------


def ingest(path: str, fmt: str = "csv") -> IngestResult:
    """Parse user,item,timestamp lines; skip and count malformed ones."""
    if fmt not in ("csv", "tsv"):
        raise DataError(f"unknown input format '{fmt}'")
    delim = "," if fmt == "csv" else "\t"
    records: list[InteractionRecord] = []
    malformed = 0
    total = 0
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read '{path}': {exc}") from exc
    with fh:
        reader = csv.reader(fh, delimiter=delim)
        for lineno, row in enumerate(reader):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            total += 1
            if lineno == 0 and _looks_like_header(row):
                total -= 1
                continue
            rec = _parse_row(row)
            if rec is None:
                malformed += 1
            else:
                records.append(rec)
    if total == 0:
        log.warning("ingest: '%s' contains no interaction lines", path)
        return IngestResult([], 0, 0)
    if malformed > 0.10 * total:
        raise DataError(f"ingest: {malformed}/{total} malformed lines in '{path}' exceeds 10%")
    if malformed:
        log.warning("ingest: skipped %d malformed line(s) in '%s'", malformed, path)
    return IngestResult(records, malformed, total)


def _looks_like_header(row: list[str]) -> bool:
    return _parse_row(row) is None and any(c.strip().isalpha() for c in "".join(row))


def _parse_row(row: list[str]) -> InteractionRecord | None:
    if len(row) != 3:
        return None
    user, item, ts = (c.strip() for c in row)
    if not user or not item:
        return None
    try:
        ts_val = int(ts)
    except ValueError:
        return None
    if ts_val < 0:
        return None
    return InteractionRecord(user, item, ts_val)


# -- filtering and splitting ----------------------------------------------------------


def kcore_filter(records: list[InteractionRecord], k: int = 5) -> list[InteractionRecord]:
    """Iteratively drop users and items with fewer than k interactions until
    both constraints hold simultaneously."""
    if k < 1:
        raise DataError(f"kcore_filter: k must be >= 1, got {k}")
    current = records
    while True:
        user_counts: dict[str, int] = {}
        item_counts: dict[str, int] = {}
        for r in current:
            user_counts[r.user_id] = user_counts.get(r.user_id, 0) + 1
            item_counts[r.item_id] = item_counts.get(r.item_id, 0) + 1
        keep_users = {u for u, c in user_counts.items() if c >= k}
        keep_items = {i for i, c in item_counts.items() if c >= k}
        filtered = [r for r in current if r.user_id in keep_users and r.item_id in keep_items]
        if len(filtered) == len(current):
            if not filtered:
                raise DataError(f"kcore_filter: no interactions survive k={k}")
            return filtered
        current = filtered


def build_dataset(records: list[InteractionRecord]) -> InteractionDataset:
    """Index users/items densely (first-appearance order) and sort each user's
    interactions chronologically, ties broken by input order."""
    if not records:
        raise DataError("build_dataset: no records")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    per_user: dict[int, list[tuple[int, int, int]]] = {}
    for order, r in enumerate(records):
        u = user_index.setdefault(r.user_id, len(user_index))
        v = item_index.setdefault(r.item_id, len(item_index) + 1)  # 0 reserved for padding
        per_user.setdefault(u, []).append((r.timestamp, order, v))
    sequences = []
    for u in range(len(user_index)):
        events = sorted(per_user[u])  # (timestamp, input order, item)
        sequences.append(np.array([v for _, _, v in events], dtype=np.int32))
    return InteractionDataset(n_users=len(user_index), n_items=len(item_index), sequences=sequences)


def split_leave_one_out(dataset: InteractionDataset) -> InteractionDataset:
    """Mark the last item of each sequence as test target and the second-to-last
    as validation target; users shorter than 3 are dropped with a warning."""
    kept = [s for s in dataset.sequences if len(s) >= 3]
    dropped = dataset.n_users - len(kept)
    if dropped:
        log.warning("split_leave_one_out: dropped %d user(s) with sequence length < 3", dropped)
    if not kept:
        raise DataError("split_leave_one_out: no user has a sequence of length >= 3")
    return InteractionDataset(
        n_users=len(kept),
        n_items=dataset.n_items,
        sequences=kept,
        split_done=True,
        dropped_users=dropped,
    )


# -- batching ----------------------------------------------------------------------


def _pad_left(seq: np.ndarray, n: int) -> np.ndarray:
    """Keep the most recent n entries, left-pad with 0 to length n."""
    seq = seq[-n:]
    out = np.zeros(n, dtype=np.int32)
    if len(seq):
        out[n - len(seq) :] = seq
    return out


def _sample_negatives(row_mask: np.ndarray, forbidden: np.ndarray, n_items: int, stream: Substream) -> np.ndarray:
    """One negative per valid position, never colliding with the user's
    training items."""
    need = int(row_mask.sum())
    out = np.zeros(row_mask.shape[0], dtype=np.int32)
    if need == 0:
        return out
    if len(np.unique(forbidden)) >= n_items:
        raise DataError("negative sampling: user interacted with every item")
    draws = stream.integers(1, n_items + 1, size=need).astype(np.int32)
    for _ in range(1000):
        bad = np.isin(draws, forbidden)
        if not bad.any():
            break
        draws[bad] = stream.integers(1, n_items + 1, size=int(bad.sum())).astype(np.int32)
    else:
        raise DataError("negative sampling: could not avoid the user's items")
    out[row_mask] = draws
    return out


def build_batches(dataset: InteractionDataset, batch_size: int, max_len: int, rng: RngStream):
    """Yield shuffled training batches; negatives are freshly drawn per call
    (one call per epoch)."""
    if batch_size < 1 or max_len < 2:
        raise DataError(f"build_batches: need batch_size >= 1 and max_len >= 2, got {batch_size}, {max_len}")
    if not dataset.split_done:
        raise DataError("build_batches: dataset is not split yet")
    order = rng.stream("data-shuffle").permutation(dataset.n_users)
    neg_stream = rng.stream("negatives")
    trainable = [u for u in order if len(dataset.train_prefix(int(u))) >= 2]
    for start in range(0, len(trainable), batch_size):
        chunk = trainable[start : start + batch_size]
        b = len(chunk)
        input_ids = np.zeros((b, max_len), dtype=np.int32)
        pos_ids = np.zeros((b, max_len), dtype=np.int32)
        neg_ids = np.zeros((b, max_len), dtype=np.int32)
        user_ids = np.zeros(b, dtype=np.int32)
        for i, u in enumerate(chunk):
            u = int(u)
            prefix = dataset.train_prefix(u)
            input_ids[i] = _pad_left(prefix[:-1], max_len)
            pos_ids[i] = _pad_left(prefix[1:], max_len)
            user_ids[i] = u
        mask = input_ids != 0
        for i, u in enumerate(chunk):
            neg_ids[i] = _sample_negatives(mask[i], dataset.train_prefix(int(u)), dataset.n_items, neg_stream)
        yield SequenceBatch(input_ids, pos_ids, neg_ids, mask, user_ids)


def build_eval_batches(dataset: InteractionDataset, split: str, batch_size: int, max_len: int):
    """Yield (input_ids, mask, user_ids, targets) for ranking evaluation."""
    if split not in ("val", "test"):
        raise DataError(f"unknown split '{split}'")
    if not dataset.split_done:
        raise DataError("build_eval_batches: dataset is not split yet")
    users = list(range(dataset.n_users))
    for start in range(0, len(users), batch_size):
        chunk = users[start : start + batch_size]
        b = len(chunk)
        input_ids = np.zeros((b, max_len), dtype=np.int32)
        targets = np.zeros(b, dtype=np.int32)
        for i, u in enumerate(chunk):
            seq = dataset.val_input(u) if split == "val" else dataset.test_input(u)
            input_ids[i] = _pad_left(seq, max_len)
            targets[i] = dataset.val_target(u) if split == "val" else dataset.test_target(u)
        yield input_ids, input_ids != 0, np.array(chunk, dtype=np.int32), targets


# -- synthetic data ---------------------------------------------------------------


def gen_synthetic(
    seed: int,
    n_users: int,
    n_items: int,
    pattern: str = "markov",
    min_len: int = 8,
    max_len: int = 24,
) -> InteractionDataset:
    """Deterministic synthetic dataset with planted first-order structure.

    markov: next item drawn from a band around the current one, so a working
    model learns the band. blocks: each user draws items from one block of
    the catalog. Output always satisfies the 5-core constraint and is split.
    """
    if n_users < 10 or n_items < 10:
        raise DataError("gen_synthetic: need n_users >= 10 and n_items >= 10")
    gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5E71])))
    min_len = max(min_len, 5)
    sequences = []
    if pattern == "markov":
        band = max(2, n_items // 50)
        for _ in range(n_users):
            length = int(gen.integers(min_len, max_len + 1))
            cur = int(gen.integers(1, n_items + 1))
            seq = [cur]
            for _ in range(length - 1):
                step = int(gen.integers(-band, band + 1))
                cur = (cur - 1 + step) % n_items + 1
                seq.append(cur)
            sequences.append(np.array(seq, dtype=np.int32))
    elif pattern == "blocks":
        n_blocks = max(2, n_items // 25)
        block_size = n_items // n_blocks
        for u in range(n_users):
            blk = int(gen.integers(0, n_blocks))
            lo = blk * block_size + 1
            hi = n_items + 1 if blk == n_blocks - 1 else lo + block_size
            length = int(gen.integers(min_len, max_len + 1))
            seq = gen.integers(lo, hi, size=length).astype(np.int32)
            sequences.append(seq)
    else:
        raise DataError(f"gen_synthetic: unknown pattern '{pattern}'")

    records = [
        InteractionRecord(f"u{u}", f"i{int(v)}", t)
        for u, seq in enumerate(sequences)
        for t, v in enumerate(seq)
    ]
    filtered = kcore_filter(records, k=5)
    return split_leave_one_out(build_dataset(filtered))


# -- binary cache ----------------------------------------------------------------


def save_dataset(path: str, dataset: InteractionDataset) -> None:
    """Write the processed dataset: magic, version, counts, then dense id
    arrays, little-endian."""
    lengths = np.array([len(s) for s in dataset.sequences], dtype="<u4")
    total = int(lengths.sum())
    flat = np.concatenate(dataset.sequences).astype("<u4") if total else np.zeros(0, dtype="<u4")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIIQB", CACHE_VERSION, dataset.n_users, dataset.n_items, total, int(dataset.split_done)))
        fh.write(lengths.tobytes())
        fh.write(flat.tobytes())


def load_dataset(path: str) -> InteractionDataset:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read dataset cache '{path}': {exc}") from exc
    if raw[:4] != CACHE_MAGIC:
        raise DataError(f"'{path}' is not a dataset cache (bad magic)")
    version, n_users, n_items, total, split_done = struct.unpack_from("<IIIQB", raw, 4)
    if version != CACHE_VERSION:
        raise DataError(f"unsupported cache version {version}")
    off = 4 + struct.calcsize("<IIIQB")
    lengths = np.frombuffer(raw, dtype="<u4", count=n_users, offset=off)
    off += lengths.nbytes
    flat = np.frombuffer(raw, dtype="<u4", count=total, offset=off)
    sequences = []
    pos = 0
    for n in lengths:
        sequences.append(flat[pos : pos + n].astype(np.int32))
        pos += int(n)
    return InteractionDataset(n_users=int(n_users), n_items=int(n_items), sequences=sequences, split_done=bool(split_done))

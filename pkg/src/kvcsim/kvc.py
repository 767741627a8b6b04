"""Simulated KV-cache: a block-granular token pool with embedding-based
reuse, a shared reserve, and growth.

Accounting rules:

- A plain allocation's footprint is its granted tokens rounded up to whole
  blocks. Guests (embedded allocations) live inside a host's footprint and
  contribute zero top-level tokens.
- free = capacity - reserve - sum(top-level footprints), derived, so
  conservation holds by construction; the checker verifies it stays
  non-negative and that guest regions never overlap each other or the
  host's used region.
- Guests are placed flush to the end of the host's allocation: offset =
  a_host - n_guest. That satisfies the feasibility inequality
  a - (u + out) - (prompt + out) >= buffer and can never overrun the host.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Union


@dataclass(frozen=True)
class Grant:
    tokens: int
    footprint: int


@dataclass(frozen=True)
class Shortfall:
    missing: int


AllocResult = Union[Grant, Shortfall]


@dataclass(frozen=True)
class EmbedQuote:
    host: int
    start_offset: int
    feasible_slack: int


@dataclass
class AllocationRecord:
    owner: int
    granted: int
    host: Optional[int] = None
    embed_offset: int = 0
    guests: List[int] = field(default_factory=list)
    reserved_blocks: int = 0
    used: int = 0


class BlockPool:
    """Token pool owned by the engine loop; all operations are sequential."""

    def __init__(
        self,
        capacity: int,
        block_size: int = 8,
        reserved_blocks: int = 8,
        buffer_b: int = 8,
        allow_stacking: bool = False,
    ) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        if buffer_b < 0:
            raise ValueError("buffer_b must be >= 0")
        if reserved_blocks < 0:
            raise ValueError("reserved_blocks must be >= 0")
        if reserved_blocks * block_size > capacity:
            raise ValueError("reserve exceeds capacity")
        self.capacity = capacity
        self.block_size = block_size
        self.reserved_target = reserved_blocks
        self.reserved_blocks_current = reserved_blocks
        self.buffer_b = buffer_b
        self.allow_stacking = allow_stacking
        self._records: Dict[int, AllocationRecord] = {}
        self._footprint_sum = 0
        self._granted_sum = 0

    # -- derived state ------------------------------------------------------

    def _fp(self, tokens: int) -> int:
        bs = self.block_size
        return ((tokens + bs - 1) // bs) * bs

    @property
    def free_tokens(self) -> int:
        return (
            self.capacity
            - self.reserved_blocks_current * self.block_size
            - self._footprint_sum
        )

    @property
    def footprint_tokens(self) -> int:
        return self._footprint_sum

    @property
    def granted_tokens(self) -> int:
        return self._granted_sum

    @property
    def used_tokens(self) -> int:
        return sum(r.used for r in self._records.values())

    def owners(self) -> List[int]:
        return list(self._records)

    def holds(self, req_id: int) -> bool:
        return req_id in self._records

    def granted_of(self, req_id: int) -> int:
        return self._require(req_id).granted

    def used_of(self, req_id: int) -> int:
        return self._require(req_id).used

    def host_of(self, req_id: int) -> Optional[int]:
        return self._require(req_id).host

    def guests_of(self, req_id: int) -> List[int]:
        return list(self._require(req_id).guests)

    def offset_of(self, req_id: int) -> int:
        return self._require(req_id).embed_offset

    def reserved_drawn_of(self, req_id: int) -> int:
        return self._require(req_id).reserved_blocks

    def _require(self, req_id: int) -> AllocationRecord:
        rec = self._records.get(req_id)
        if rec is None:
            raise ValueError(f"no allocation for request {req_id}")
        return rec

    def net_release_gain(self, req_id: int) -> int:
        """Free tokens that releasing this allocation would yield, after
        guest re-homing and reserve replenishment."""
        rec = self._require(req_id)
        if rec.host is not None:
            return 0
        freed = self._fp(rec.granted)
        for gid in rec.guests:
            freed -= self._fp(self._records[gid].granted)
        refill = min(rec.reserved_blocks, self.reserved_target - self.reserved_blocks_current)
        return freed - refill * self.block_size

    # -- operations ---------------------------------------------------------

    def allocate(self, req_id: int, n_tokens: int) -> AllocResult:
        if n_tokens < 1:
            raise ValueError("n_tokens must be >= 1")
        if req_id in self._records:
            raise ValueError(f"request {req_id} already holds an allocation")
        fp = self._fp(n_tokens)
        if fp > self.free_tokens:
            return Shortfall(missing=fp - self.free_tokens)
        self._records[req_id] = AllocationRecord(owner=req_id, granted=n_tokens)
        self._footprint_sum += fp
        self._granted_sum += n_tokens
        return Grant(tokens=n_tokens, footprint=fp)

    def find_embedding_host(
        self,
        running: Iterable[Tuple[int, int, int]],
        cand_prompt: int,
        cand_out: int,
        buffer_b: Optional[int] = None,
    ) -> Optional[EmbedQuote]:
        """Among running requests (id, allocated, used), pick the feasible
        host with minimum remaining allocation; ties go to the lower id."""
        b = self.buffer_b if buffer_b is None else buffer_b
        if b < 0:
            raise ValueError("buffer_b must be >= 0")
        need = cand_prompt + cand_out
        best: Optional[Tuple[int, int, EmbedQuote]] = None
        for host_id, a_j, u_j in running:
            rec = self._records.get(host_id)
            if rec is None or rec.host is not None:
                continue
            if rec.guests and not self.allow_stacking:
                continue
            end = a_j
            if rec.guests:
                end = min(self._records[g].embed_offset for g in rec.guests)
            slack = end - (u_j + cand_out) - need
            if slack < b:
                continue
            key = (a_j - u_j, host_id)
            if best is None or key < best[:2]:
                quote = EmbedQuote(host=host_id, start_offset=end - need,
                                   feasible_slack=slack)
                best = (key[0], key[1], quote)
        return best[2] if best else None

    def embed(self, req_id: int, n_tokens: int, quote: EmbedQuote) -> AllocResult:
        if n_tokens < 1:
            raise ValueError("n_tokens must be >= 1")
        if req_id in self._records:
            raise ValueError(f"request {req_id} already holds an allocation")
        host = self._require(quote.host)
        if host.host is not None:
            raise ValueError(f"host {quote.host} is itself embedded")
        if req_id == quote.host:
            raise ValueError("a request cannot host itself")
        if host.guests and not self.allow_stacking:
            raise ValueError(f"host {quote.host} already has a guest")
        if quote.start_offset < 0 or quote.start_offset + n_tokens > host.granted:
            raise ValueError("embed region exceeds host allocation")
        for gid in host.guests:
            g = self._records[gid]
            if not (quote.start_offset + n_tokens <= g.embed_offset
                    or g.embed_offset + g.granted <= quote.start_offset):
                raise ValueError("embed region overlaps an existing guest")
        self._records[req_id] = AllocationRecord(
            owner=req_id, granted=n_tokens, host=quote.host,
            embed_offset=quote.start_offset,
        )
        host.guests.append(req_id)
        self._granted_sum += n_tokens
        return Grant(tokens=n_tokens, footprint=0)

    def draw_reserved(self, req_id: int, n_blocks: int) -> AllocResult:
        if n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if n_blocks > self.reserved_blocks_current:
            return Shortfall(
                missing=(n_blocks - self.reserved_blocks_current) * self.block_size
            )
        tokens = n_blocks * self.block_size
        rec = self._records.get(req_id)
        if rec is None:
            rec = AllocationRecord(owner=req_id, granted=0)
            self._records[req_id] = rec
        if rec.host is not None:
            raise ValueError("guests cannot draw from the reserve")
        self.reserved_blocks_current -= n_blocks
        rec.reserved_blocks += n_blocks
        old_fp = self._fp(rec.granted) if rec.granted else 0
        rec.granted += tokens
        self._footprint_sum += self._fp(rec.granted) - old_fp
        self._granted_sum += tokens
        return Grant(tokens=tokens, footprint=tokens)

    def grow(self, req_id: int, n_tokens: int) -> AllocResult:
        if n_tokens < 1:
            raise ValueError("n_tokens must be >= 1")
        rec = self._require(req_id)
        if rec.host is None:
            old_fp = self._fp(rec.granted)
            new_fp = self._fp(rec.granted + n_tokens)
            delta = new_fp - old_fp
            if delta > self.free_tokens:
                return Shortfall(missing=delta - self.free_tokens)
            rec.granted += n_tokens
            self._footprint_sum += delta
            self._granted_sum += n_tokens
            return Grant(tokens=n_tokens, footprint=delta)
        # guests grow downward, bounded by the host's used region plus buffer
        # (or the end of the guest below them)
        host = self._records[rec.host]
        floor = host.used + self.buffer_b
        for gid in host.guests:
            if gid == req_id:
                continue
            g = self._records[gid]
            if g.embed_offset < rec.embed_offset:
                floor = max(floor, g.embed_offset + g.granted)
        allowed = rec.embed_offset - floor
        if n_tokens > allowed:
            return Shortfall(missing=n_tokens - max(0, allowed))
        rec.embed_offset -= n_tokens
        rec.granted += n_tokens
        self._granted_sum += n_tokens
        return Grant(tokens=n_tokens, footprint=0)

    def promote_guest(self, req_id: int) -> AllocResult:
        """Detach a guest into its own standalone region.  Blocks are paged so
        no data moves, but the footprint now comes out of the free pool."""
        rec = self._require(req_id)
        if rec.host is None:
            raise ValueError(f"request {req_id} is not embedded")
        fp = self._fp(rec.granted)
        if fp > self.free_tokens:
            return Shortfall(missing=fp - self.free_tokens)
        host = self._records[rec.host]
        host.guests.remove(req_id)
        rec.host = None
        rec.embed_offset = 0
        self._footprint_sum += fp
        return Grant(tokens=0, footprint=fp)

    def release(self, req_id: int) -> int:
        """Release an allocation; returns the net tokens returned to the
        free pool (zero for guests)."""
        rec = self._require(req_id)
        if rec.host is not None:
            host = self._records.get(rec.host)
            if host is not None:
                host.guests.remove(req_id)
            del self._records[req_id]
            self._granted_sum -= rec.granted
            return 0
        freed = self._fp(rec.granted)
        for gid in rec.guests:
            g = self._records[gid]
            g.host = None
            g.embed_offset = 0
            fp = self._fp(g.granted)
            self._footprint_sum += fp
            freed -= fp
        self._footprint_sum -= self._fp(rec.granted)
        self._granted_sum -= rec.granted
        refill = min(rec.reserved_blocks,
                     self.reserved_target - self.reserved_blocks_current)
        self.reserved_blocks_current += refill
        del self._records[req_id]
        return freed - refill * self.block_size

    def set_used(self, req_id: int, used_tokens: int) -> None:
        rec = self._require(req_id)
        if used_tokens < 0 or used_tokens > rec.granted:
            raise ValueError(
                f"request {req_id}: used {used_tokens} outside [0, {rec.granted}]"
            )
        rec.used = used_tokens

    # -- invariants ---------------------------------------------------------

    def check_invariants(self) -> None:
        """Raise on conservation or overlap violations."""
        fp_sum = sum(
            self._fp(r.granted) for r in self._records.values() if r.host is None
        )
        if fp_sum != self._footprint_sum:
            raise ValueError(
                f"footprint drift: cached {self._footprint_sum}, actual {fp_sum}"
            )
        if self.free_tokens < 0:
            raise ValueError(f"free tokens negative: {self.free_tokens}")
        if not 0 <= self.reserved_blocks_current <= self.reserved_target:
            raise ValueError(
                f"reserve out of range: {self.reserved_blocks_current}"
            )
        for rid, rec in self._records.items():
            if rec.used > rec.granted:
                raise ValueError(f"request {rid}: used exceeds granted")
            if rec.host is not None:
                if rec.guests:
                    raise ValueError(f"guest {rid} has guests of its own")
                host = self._records.get(rec.host)
                if host is None or rid not in host.guests:
                    raise ValueError(f"guest {rid} detached from host {rec.host}")
                if rec.embed_offset < 0 or rec.embed_offset + rec.granted > host.granted:
                    raise ValueError(f"guest {rid} exceeds host region")
            if rec.guests:
                spans = sorted(
                    (self._records[g].embed_offset,
                     self._records[g].embed_offset + self._records[g].granted)
                    for g in rec.guests
                )
                prev_end = rec.used
                for start, end in spans:
                    if start < prev_end:
                        raise ValueError(
                            f"host {rid}: guest region [{start},{end}) overlaps "
                            f"used region or a lower guest"
                        )
                    prev_end = end

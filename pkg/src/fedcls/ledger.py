"""Chunking rule and per-round communication accounting."""

from __future__ import annotations

import dataclasses

from .errors import ContractError


def chunk_count(dim: int, slot_count: int) -> int:
    """Ciphertexts needed to pack a dim-entry vector: ceil(dim / slot_count)."""
    if dim < 1 or slot_count < 1:
        raise ContractError("dim and slot_count must be >= 1")
    return -(-dim // slot_count)


@dataclasses.dataclass(frozen=True)
class Message:
    sender: str
    receiver: str
    kind: str
    n_bytes: int
    chunks: int = 1


class CommLedger:
    """Append-only record of every transmitted payload."""

    def __init__(self):
        self.messages: list[Message] = []

    def record(
        self, sender: str, receiver: str, kind: str, n_bytes: int, chunks: int = 1
    ) -> None:
        if n_bytes < 0 or chunks < 0:
            raise ContractError("byte and chunk counts must be non-negative")
        self.messages.append(Message(sender, receiver, kind, n_bytes, chunks))

    def total_bytes(self) -> int:
        return sum(m.n_bytes for m in self.messages)

    def bytes_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.messages:
            out[m.kind] = out.get(m.kind, 0) + m.n_bytes
        return out

    def bytes_by_sender(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.messages:
            out[m.sender] = out.get(m.sender, 0) + m.n_bytes
        return out

    def chunks_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.messages:
            out[m.kind] = out.get(m.kind, 0) + m.chunks
        return out

    def summary(self) -> dict:
        by_kind = self.bytes_by_kind()
        out = {
            "messages": len(self.messages),
            "total_bytes": self.total_bytes(),
            "bytes_by_kind": by_kind,
            "bytes_by_sender": self.bytes_by_sender(),
            "chunks_by_kind": self.chunks_by_kind(),
        }
        cls_b = by_kind.get("cls_tokens")
        grad_b = by_kind.get("gradient_vectors")
        if cls_b and grad_b:
            out["gradient_to_cls_byte_ratio"] = grad_b / cls_b
        return out

    def to_records(self) -> list[dict]:
        return [dataclasses.asdict(m) for m in self.messages]

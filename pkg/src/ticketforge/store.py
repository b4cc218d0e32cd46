"""Ticket persistence in the ``TKT1`` binary format.

Layout (little-endian)::

    b"TKT1"
    u32  header length
    header: UTF-8 ``key=value`` lines, sorted by key
    per tensor, in header order:
        bit-packed mask (np.packbits, big bit order), if the file has masks
        raw float values of theta0, if the file embeds theta0
    u64  checksum: first 8 bytes of BLAKE2b over everything above

A run directory keeps theta0 once (``theta0.bin``, a TKT1 file without masks)
and every round ticket references it by digest.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, TicketFormatError
from .pruning import MaskSet, PruneConfig
from .textcnn import ModelConfig, ParamSet, param_shapes

MAGIC = b"TKT1"
FORMAT_VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


@dataclass
class Ticket:
    round: int
    mask: MaskSet | None
    theta0: ParamSet | None
    theta0_digest: str
    model_cfg: ModelConfig
    prune_cfg: PruneConfig
    vocab_digest: str
    domain: str
    seed: int
    strategy: str = "reset"
    sparsity: float | None = None

    def with_theta0(self, theta0: ParamSet) -> "Ticket":
        if params_digest(theta0) != self.theta0_digest:
            raise TicketFormatError("theta0 digest does not match the ticket's reference")
        return replace(self, theta0=theta0)


def params_digest(params: ParamSet) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = params[name]
        code = _dtype_code(arr.dtype)
        h.update(f"{name}:{code}:{'x'.join(map(str, arr.shape))};".encode())
        h.update(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return h.hexdigest()


def _dtype_code(dtype) -> str:
    dt = np.dtype(dtype)
    if dt == np.float32:
        return "f4"
    if dt == np.float64:
        return "f8"
    raise TicketFormatError(f"unsupported parameter dtype {dt}")


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def _header(t: Ticket, has_mask: bool, dtype_code: str | None) -> str:
    cfg = t.model_cfg
    kv = {
        "format.version": str(FORMAT_VERSION),
        "ticket.round": str(t.round),
        "ticket.domain": t.domain,
        "ticket.seed": str(t.seed),
        "ticket.strategy": t.strategy,
        "ticket.sparsity": "" if t.sparsity is None else repr(float(t.sparsity)),
        "ticket.vocab_digest": t.vocab_digest,
        "ticket.theta0_digest": t.theta0_digest,
        "content.mask": "1" if has_mask else "0",
        "content.theta0": dtype_code or "",
        "model.vocab_size": str(cfg.vocab_size),
        "model.embed_dim": str(cfg.embed_dim),
        "model.heights": ",".join(map(str, cfg.heights)),
        "model.channels": str(cfg.channels),
        "model.mlp_hidden": str(cfg.mlp_hidden),
        "model.num_classes": str(cfg.num_classes),
        "model.max_len": str(cfg.max_len),
        "model.dropout_p": repr(float(cfg.dropout_p)),
        "prune.fraction": repr(float(t.prune_cfg.fraction)),
        "prune.rounds": str(t.prune_cfg.rounds),
        "prune.mode": t.prune_cfg.mode,
    }
    for i, (name, shape) in enumerate(param_shapes(cfg).items()):
        kv[f"tensor.{i:03d}"] = f"{name}:{'x'.join(map(str, shape))}"
    for k, v in kv.items():
        if "\n" in v or "=" in k:
            raise TicketFormatError(f"header field {k!r} not representable")
    return "".join(f"{k}={kv[k]}\n" for k in sorted(kv))


def encode_ticket(t: Ticket, embed_theta0: bool = True) -> bytes:
    """Serialize a ticket; shapes are validated against its model config."""
    shapes = param_shapes(t.model_cfg)
    has_mask = t.mask is not None
    code = None
    if embed_theta0:
        if t.theta0 is None:
            raise TicketFormatError("cannot embed theta0: ticket has none")
        dtypes = {_dtype_code(a.dtype) for a in t.theta0.values()}
        if len(dtypes) != 1:
            raise TicketFormatError(f"mixed theta0 dtypes {sorted(dtypes)}")
        code = dtypes.pop()
    for name, shape in shapes.items():
        if has_mask and t.mask[name].shape != shape:
            raise TicketFormatError(f"mask {name}: shape {t.mask[name].shape} != {shape}")
        if code and t.theta0[name].shape != shape:
            raise TicketFormatError(f"theta0 {name}: shape {t.theta0[name].shape} != {shape}")
    header = _header(t, has_mask, code).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(header)), header]
    for name in shapes:
        if has_mask:
            parts.append(np.packbits(t.mask[name].reshape(-1).astype(bool)).tobytes())
        if code:
            parts.append(np.ascontiguousarray(t.theta0[name], dtype=_DTYPES[code]).tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


def save_ticket(t: Ticket, path, embed_theta0: bool = True) -> str:
    """Write a ticket atomically and return the SHA-256 digest of the file."""
    data = encode_ticket(t, embed_theta0)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_name(p.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, p)
    return hashlib.sha256(data).hexdigest()


def decode_ticket(data: bytes) -> Ticket:
    if len(data) < len(MAGIC) + 4 + 8:
        raise TicketFormatError("ticket file truncated")
    if data[:4] != MAGIC:
        raise TicketFormatError("not a TKT1 file (bad magic)")
    body, stored = data[:-8], data[-8:]
    if _checksum(body) != stored:
        raise TicketFormatError("checksum mismatch: file corrupted or truncated")
    (hlen,) = struct.unpack_from("<I", body, 4)
    start = 8 + hlen
    if start > len(body):
        raise TicketFormatError("header length exceeds file size")
    try:
        kv = dict(line.split("=", 1) for line in body[8:start].decode("utf-8").splitlines())
        version = int(kv["format.version"])
    except (UnicodeDecodeError, ValueError, KeyError) as exc:
        raise TicketFormatError("malformed ticket header") from exc
    if version != FORMAT_VERSION:
        raise TicketFormatError(f"unsupported ticket format version {version}")

    try:
        cfg = ModelConfig(
            vocab_size=int(kv["model.vocab_size"]), embed_dim=int(kv["model.embed_dim"]),
            heights=tuple(int(h) for h in kv["model.heights"].split(",")),
            channels=int(kv["model.channels"]), mlp_hidden=int(kv["model.mlp_hidden"]),
            num_classes=int(kv["model.num_classes"]), max_len=int(kv["model.max_len"]),
            dropout_p=float(kv["model.dropout_p"]))
        prune_cfg = PruneConfig(float(kv["prune.fraction"]), int(kv["prune.rounds"]), kv["prune.mode"])
        shapes = param_shapes(cfg)
        listed = [kv[k] for k in sorted(k for k in kv if k.startswith("tensor."))]
    except (KeyError, ValueError, ConfigError) as exc:
        raise TicketFormatError(f"malformed ticket header: {exc}") from exc
    expected = [f"{n}:{'x'.join(map(str, s))}" for n, s in shapes.items()]
    if listed != expected:
        raise TicketFormatError("tensor shapes do not match the embedded model config")

    has_mask = kv["content.mask"] == "1"
    code = kv["content.theta0"] or None
    if code is not None and code not in _DTYPES:
        raise TicketFormatError(f"unknown theta0 dtype {code!r}")
    masks = {} if has_mask else None
    theta0 = {} if code else None
    off = start
    for name, shape in shapes.items():
        size = math.prod(shape)
        if has_mask:
            nbytes = (size + 7) // 8
            chunk = np.frombuffer(body, dtype=np.uint8, count=nbytes, offset=off)
            masks[name] = np.unpackbits(chunk, count=size).astype(bool).reshape(shape)
            off += nbytes
        if code:
            dt = _DTYPES[code]
            theta0[name] = np.frombuffer(body, dtype=dt, count=size, offset=off).reshape(shape).astype(dt.type)
            off += size * dt.itemsize
    if off != len(body):
        raise TicketFormatError("ticket payload size does not match header")

    ticket = Ticket(
        round=int(kv["ticket.round"]),
        mask=MaskSet(masks, int(kv["ticket.round"])) if has_mask else None,
        theta0=theta0,
        theta0_digest=kv["ticket.theta0_digest"],
        model_cfg=cfg,
        prune_cfg=prune_cfg,
        vocab_digest=kv["ticket.vocab_digest"],
        domain=kv["ticket.domain"],
        seed=int(kv["ticket.seed"]),
        strategy=kv["ticket.strategy"],
        sparsity=float(kv["ticket.sparsity"]) if kv["ticket.sparsity"] else None,
    )
    if theta0 is not None and params_digest(theta0) != ticket.theta0_digest:
        raise TicketFormatError("embedded theta0 does not match its recorded digest")
    return ticket


def load_ticket(path, theta0: ParamSet | None = None) -> Ticket:
    """Read and validate a ticket; ``theta0`` fills in a by-reference ticket."""
    p = Path(path)
    if not p.exists():
        raise TicketFormatError(f"ticket file not found: {p}")
    ticket = decode_ticket(p.read_bytes())
    if ticket.theta0 is None and theta0 is not None:
        ticket = ticket.with_theta0(theta0)
    return ticket


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- run directories ------------------------------------------------------------

def ticket_path(run_dir, round_index: int) -> Path:
    return Path(run_dir) / "tickets" / f"round-{round_index}.tkt"


def save_run_tickets(run_dir, tickets: list[Ticket], theta0: ParamSet) -> None:
    """Write ``theta0.bin`` once and one by-reference ticket per round."""
    run_dir = Path(run_dir)
    if not tickets:
        return
    base = replace(tickets[0], round=0, mask=None, theta0=theta0, sparsity=None)
    save_ticket(base, run_dir / "theta0.bin", embed_theta0=True)
    for t in tickets:
        save_ticket(t, ticket_path(run_dir, t.round), embed_theta0=False)


def load_theta0(run_dir) -> ParamSet:
    t = load_ticket(Path(run_dir) / "theta0.bin")
    if t.theta0 is None:
        raise TicketFormatError("theta0.bin carries no parameters")
    return t.theta0


def load_run_tickets(run_dir) -> list[Ticket]:
    run_dir = Path(run_dir)
    theta0 = load_theta0(run_dir)
    paths = sorted((run_dir / "tickets").glob("round-*.tkt"),
                   key=lambda p: int(p.stem.split("-")[1]))
    if not paths:
        raise TicketFormatError(f"no tickets in {run_dir}")
    return [load_ticket(p, theta0) for p in paths]

"""Binary message encodings and the star-topology transport.

Every protocol message is one length-prefixed record::

    tag (1 byte) || payload_length (4 bytes, big endian) || payload

Variable-length payload fields are themselves prefixed with a 4-byte big
endian length.  Vector elements travel as 8-byte little endian words (the
ring uses at most 64 bits).  Shamir share limbs are 66-byte big endian
field elements (the share field is the 521-bit Mersenne prime).

Users never address each other directly: the transport only accepts
messages with the server on one end and counts payload bytes per
direction, which is what the communication-cost benchmarks report.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .counters import OpCounters

TAG_SERVER_COMMIT = 1
TAG_ADVERT = 2
TAG_TREE_COMMIT = 3
TAG_RAND_OPEN = 4
TAG_PEER_LIST = 5
TAG_SHARE_MSG = 6
TAG_MASKED_UPLOAD = 7
TAG_UNMASK_REQUEST = 8
TAG_UNMASK_RESPONSE = 9
TAG_REVEAL = 10
TAG_GLOBAL_MODEL = 11

SHARE_LIMB_BYTES = 66  # holds one element of the 2^521 - 1 share field

SECRET_MASK_KEY = 1  # share of a user's pairwise-mask private key
SECRET_SELF_SEED = 2  # share of a user's per-round self-mask seed

TOKEN_BYTES = 8


def _pack_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _unpack_bytes(buf: bytes, off: int) -> tuple[bytes, int]:
    (n,) = struct.unpack_from(">I", buf, off)
    off += 4
    return buf[off : off + n], off + n


def encode_record(tag: int, payload: bytes) -> bytes:
    return struct.pack(">BI", tag, len(payload)) + payload


def decode_record(data: bytes) -> tuple[int, bytes]:
    tag, n = struct.unpack_from(">BI", data, 0)
    payload = data[5 : 5 + n]
    if len(payload) != n:
        raise ValueError("truncated record")
    return tag, payload


# ---------------------------------------------------------------------------
# messages
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ServerCommitMsg:
    digest: bytes

    def to_bytes(self) -> bytes:
        return encode_record(TAG_SERVER_COMMIT, self.digest)

    @staticmethod
    def from_bytes(data: bytes) -> "ServerCommitMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_SERVER_COMMIT
        return ServerCommitMsg(payload)


@dataclass(frozen=True)
class AdvertMsg:
    """Per-round key advertisement plus the user's randomness commitment."""

    share_pub: bytes
    mask_pub: bytes
    rand_commit: bytes

    def to_bytes(self) -> bytes:
        payload = _pack_bytes(self.share_pub) + _pack_bytes(self.mask_pub) + self.rand_commit
        return encode_record(TAG_ADVERT, payload)

    @staticmethod
    def from_bytes(data: bytes) -> "AdvertMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_ADVERT
        share_pub, off = _unpack_bytes(payload, 0)
        mask_pub, off = _unpack_bytes(payload, off)
        return AdvertMsg(share_pub, mask_pub, payload[off:])


@dataclass(frozen=True)
class TreeCommitMsg:
    tree_digest: bytes
    user_commits: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        payload = self.tree_digest + struct.pack(">I", len(self.user_commits))
        payload += b"".join(self.user_commits)
        return encode_record(TAG_TREE_COMMIT, payload)

    @staticmethod
    def from_bytes(data: bytes) -> "TreeCommitMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_TREE_COMMIT
        digest = payload[:32]
        (n,) = struct.unpack_from(">I", payload, 32)
        commits = tuple(payload[36 + 32 * i : 36 + 32 * (i + 1)] for i in range(n))
        return TreeCommitMsg(digest, commits)


@dataclass(frozen=True)
class RandOpenMsg:
    user_rand: bytes
    nonce: bytes

    def to_bytes(self) -> bytes:
        return encode_record(TAG_RAND_OPEN, _pack_bytes(self.user_rand) + _pack_bytes(self.nonce))

    @staticmethod
    def from_bytes(data: bytes) -> "RandOpenMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_RAND_OPEN
        r, off = _unpack_bytes(payload, 0)
        nonce, _ = _unpack_bytes(payload, off)
        return RandOpenMsg(r, nonce)


@dataclass(frozen=True)
class PeerHandle:
    """Opaque view of one masking peer: no identity, only what masking needs."""

    token: bytes  # random per-round pair token
    randomized_pub: bytes
    sign: int  # +1 add the pair mask, -1 subtract it
    kind: str  # "intra" or "inter"
    layer: int  # 0 for intra, tree layer for inter

    def pack(self) -> bytes:
        return (
            self.token
            + struct.pack(">bBB", self.sign, 1 if self.kind == "intra" else 2, self.layer)
            + _pack_bytes(self.randomized_pub)
        )

    @staticmethod
    def unpack(buf: bytes, off: int) -> tuple["PeerHandle", int]:
        token = buf[off : off + TOKEN_BYTES]
        off += TOKEN_BYTES
        sign, kind_code, layer = struct.unpack_from(">bBB", buf, off)
        off += 3
        pub, off = _unpack_bytes(buf, off)
        return PeerHandle(token, pub, sign, "intra" if kind_code == 1 else "inter", layer), off


@dataclass(frozen=True)
class PeerListMsg:
    """Masking peer handles plus opaque share-recipient tokens.

    ``share_recipients`` lists the round tokens of the user's whole share
    subgroup in a fixed order (the user included); share evaluation points
    are 1-based positions in that order.
    """

    own_token: bytes
    peers: tuple[PeerHandle, ...]
    share_recipients: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        payload = self.own_token
        payload += struct.pack(">I", len(self.peers)) + b"".join(p.pack() for p in self.peers)
        payload += struct.pack(">I", len(self.share_recipients)) + b"".join(self.share_recipients)
        return encode_record(TAG_PEER_LIST, payload)

    @staticmethod
    def from_bytes(data: bytes) -> "PeerListMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_PEER_LIST
        own = payload[:TOKEN_BYTES]
        (n,) = struct.unpack_from(">I", payload, TOKEN_BYTES)
        off = TOKEN_BYTES + 4
        peers = []
        for _ in range(n):
            handle, off = PeerHandle.unpack(payload, off)
            peers.append(handle)
        (k,) = struct.unpack_from(">I", payload, off)
        off += 4
        recips = tuple(payload[off + TOKEN_BYTES * i : off + TOKEN_BYTES * (i + 1)] for i in range(k))
        return PeerListMsg(own, tuple(peers), recips)


@dataclass(frozen=True)
class ShareMsg:
    """One Shamir share in transit, tagged with its owner and secret type."""

    owner_token: bytes
    recipient_token: bytes
    secret_type: int
    share_index: int
    threshold: int
    limbs: tuple[int, ...]

    def to_bytes(self) -> bytes:
        payload = self.owner_token + self.recipient_token
        payload += struct.pack(">BIHH", self.secret_type, self.share_index, self.threshold, len(self.limbs))
        for limb in self.limbs:
            payload += int(limb).to_bytes(SHARE_LIMB_BYTES, "big")
        return encode_record(TAG_SHARE_MSG, payload)

    @staticmethod
    def from_bytes(data: bytes) -> "ShareMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_SHARE_MSG
        owner = payload[:TOKEN_BYTES]
        recip = payload[TOKEN_BYTES : 2 * TOKEN_BYTES]
        stype, idx, thr, nlimbs = struct.unpack_from(">BIHH", payload, 2 * TOKEN_BYTES)
        off = 2 * TOKEN_BYTES + 9
        limbs = tuple(
            int.from_bytes(payload[off + SHARE_LIMB_BYTES * i : off + SHARE_LIMB_BYTES * (i + 1)], "big")
            for i in range(nlimbs)
        )
        return ShareMsg(owner, recip, stype, idx, thr, limbs)


@dataclass(frozen=True)
class MaskedUploadMsg:
    token: bytes
    words: bytes  # m little endian 8-byte words

    @staticmethod
    def from_vector(token: bytes, values: np.ndarray) -> "MaskedUploadMsg":
        return MaskedUploadMsg(token, values.astype("<u8").tobytes())

    def vector(self) -> np.ndarray:
        return np.frombuffer(self.words, dtype="<u8").astype(np.uint64)

    def to_bytes(self) -> bytes:
        return encode_record(TAG_MASKED_UPLOAD, self.token + self.words)

    @staticmethod
    def from_bytes(data: bytes) -> "MaskedUploadMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_MASKED_UPLOAD
        return MaskedUploadMsg(payload[:TOKEN_BYTES], payload[TOKEN_BYTES:])


@dataclass(frozen=True)
class UnmaskRequestMsg:
    """Targets and which secret type to release for each.

    ``forced`` marks targets the server excluded after detection; an honest
    user treats them like dropouts when applying its release rules.
    """

    targets: tuple[tuple[bytes, int], ...]  # (owner token, secret type)
    forced: tuple[bytes, ...] = ()

    def to_bytes(self) -> bytes:
        payload = struct.pack(">I", len(self.targets))
        for token, stype in self.targets:
            payload += token + struct.pack(">B", stype)
        payload += struct.pack(">I", len(self.forced)) + b"".join(self.forced)
        return encode_record(TAG_UNMASK_REQUEST, payload)

    @staticmethod
    def from_bytes(data: bytes) -> "UnmaskRequestMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_UNMASK_REQUEST
        (n,) = struct.unpack_from(">I", payload, 0)
        off = 4
        targets = []
        for _ in range(n):
            token = payload[off : off + TOKEN_BYTES]
            off += TOKEN_BYTES
            (stype,) = struct.unpack_from(">B", payload, off)
            off += 1
            targets.append((token, stype))
        (k,) = struct.unpack_from(">I", payload, off)
        off += 4
        forced = tuple(payload[off + TOKEN_BYTES * i : off + TOKEN_BYTES * (i + 1)] for i in range(k))
        return UnmaskRequestMsg(tuple(targets), forced)


@dataclass(frozen=True)
class UnmaskResponseMsg:
    shares: tuple[ShareMsg, ...]
    refused: tuple[tuple[bytes, int], ...] = ()  # (owner token, refused type)

    def to_bytes(self) -> bytes:
        inner = struct.pack(">I", len(self.shares)) + b"".join(
            _pack_bytes(s.to_bytes()) for s in self.shares
        )
        inner += struct.pack(">I", len(self.refused))
        for token, stype in self.refused:
            inner += token + struct.pack(">B", stype)
        return encode_record(TAG_UNMASK_RESPONSE, inner)

    @staticmethod
    def from_bytes(data: bytes) -> "UnmaskResponseMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_UNMASK_RESPONSE
        (n,) = struct.unpack_from(">I", payload, 0)
        off = 4
        shares = []
        for _ in range(n):
            raw, off = _unpack_bytes(payload, off)
            shares.append(ShareMsg.from_bytes(raw))
        (k,) = struct.unpack_from(">I", payload, off)
        off += 4
        refused = []
        for _ in range(k):
            token = payload[off : off + TOKEN_BYTES]
            off += TOKEN_BYTES
            (stype,) = struct.unpack_from(">B", payload, off)
            off += 1
            refused.append((token, stype))
        return UnmaskResponseMsg(tuple(shares), tuple(refused))


@dataclass(frozen=True)
class RevealMsg:
    """Post-upload opening: server randomness, tree shape, and the full
    per-user opening list, broadcast for client-side verification."""

    server_rand: bytes
    server_nonce: bytes
    tree_desc: bytes
    tree_nonce: bytes
    user_records: tuple[tuple[bytes, bytes, bytes, bytes], ...]  # (share_pub, mask_pub, rand, nonce)

    def to_bytes(self) -> bytes:
        payload = _pack_bytes(self.server_rand) + _pack_bytes(self.server_nonce)
        payload += _pack_bytes(self.tree_desc) + _pack_bytes(self.tree_nonce)
        payload += struct.pack(">I", len(self.user_records))
        for rec in self.user_records:
            for part in rec:
                payload += _pack_bytes(part)
        return encode_record(TAG_REVEAL, payload)

    @staticmethod
    def from_bytes(data: bytes) -> "RevealMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_REVEAL
        server_rand, off = _unpack_bytes(payload, 0)
        server_nonce, off = _unpack_bytes(payload, off)
        tree_desc, off = _unpack_bytes(payload, off)
        tree_nonce, off = _unpack_bytes(payload, off)
        (n,) = struct.unpack_from(">I", payload, off)
        off += 4
        records = []
        for _ in range(n):
            parts = []
            for _ in range(4):
                part, off = _unpack_bytes(payload, off)
                parts.append(part)
            records.append(tuple(parts))
        return RevealMsg(server_rand, server_nonce, tree_desc, tree_nonce, tuple(records))


@dataclass(frozen=True)
class GlobalModelMsg:
    words: bytes

    @staticmethod
    def from_vector(values: np.ndarray) -> "GlobalModelMsg":
        return GlobalModelMsg(values.astype("<u8").tobytes())

    def vector(self) -> np.ndarray:
        return np.frombuffer(self.words, dtype="<u8").astype(np.uint64)

    def to_bytes(self) -> bytes:
        return encode_record(TAG_GLOBAL_MODEL, self.words)

    @staticmethod
    def from_bytes(data: bytes) -> "GlobalModelMsg":
        tag, payload = decode_record(data)
        assert tag == TAG_GLOBAL_MODEL
        return GlobalModelMsg(payload)


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------

SERVER = "server"


@dataclass
class StarTransport:
    """Relays encoded messages between the server and users only.

    Any user-to-user send raises; the protocol has no such edge.  Byte
    counts accumulate per direction so benchmark reports can attribute
    communication cost to roles.
    """

    counters: OpCounters
    log_traffic: bool = False
    traffic: list[tuple[str, str, int]] = field(default_factory=list)

    def deliver(self, sender: str, receiver: str, encoded: bytes) -> bytes:
        if sender != SERVER and receiver != SERVER:
            raise AssertionError(f"direct user-to-user message {sender} -> {receiver}")
        if sender == SERVER:
            self.counters.bytes_server_to_user += len(encoded)
        else:
            self.counters.bytes_user_to_server += len(encoded)
        if self.log_traffic:
            self.traffic.append((sender, receiver, len(encoded)))
        return encoded

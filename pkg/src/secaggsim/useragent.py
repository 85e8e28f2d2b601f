"""Per-user protocol state machine.

A user advertises one-time keys, commits and opens its grouping
randomness, secret-shares its mask key and self-mask seed inside an
opaque recipient list, uploads its masked input, and answers unmask
requests under the release rules.  Users never see identities or
subgroup structure: peers arrive as server-randomized key handles and
share recipients as anonymous round tokens.

Release rule: within a round, a user never hands the server shares of
both a target's mask key and the same target's self-mask seed.  The only
sanctioned override is a target the server has excluded after detection
(a forced dropout, whose upload the server discards); those releases are
recorded so a transcript audit can list every override.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random

from .counters import OpCounters
from .crypto import DhGroup, KeyPair, Share, derive_shared_seed, prg_expand, share_secret
from .errors import ProtocolAbort
from .fixedpoint import ParamVector, SegmentSpec, vec_add_mod, vec_sub_mod
from .wire import (
    SECRET_MASK_KEY,
    SECRET_SELF_SEED,
    AdvertMsg,
    MaskedUploadMsg,
    PeerHandle,
    PeerListMsg,
    RandOpenMsg,
    ShareMsg,
    UnmaskRequestMsg,
    UnmaskResponseMsg,
)

# Monotone round phases.
PHASE_IDLE = "idle"
PHASE_ADVERTISE = "advertise"
PHASE_COMMIT = "commit"
PHASE_SHARE = "share"
PHASE_UPLOAD = "upload"
PHASE_UNMASK = "unmask"

_ORDER = [PHASE_IDLE, PHASE_ADVERTISE, PHASE_COMMIT, PHASE_SHARE, PHASE_UPLOAD, PHASE_UNMASK]

SELF_SEED_BYTES = 32


@dataclass
class _StoredShare:
    msg: ShareMsg

    @property
    def share(self) -> Share:
        return Share(
            index=self.msg.share_index,
            values=self.msg.limbs,
            threshold=self.msg.threshold,
        )


class UserAgent:
    """One protocol participant; owns its keys and round state."""

    def __init__(
        self,
        index: int,
        *,
        group: DhGroup,
        spec: SegmentSpec,
        inter_mask_bits: int,
        share_threshold: int,
        counters: OpCounters,
    ):
        self.index = index
        self.group = group
        self.spec = spec
        self.inter_mask_bits = inter_mask_bits
        self.share_threshold = share_threshold
        self.counters = counters
        self.phase = PHASE_IDLE
        self._rng: Random | None = None

    # -- phase checks -------------------------------------------------------

    def _advance(self, expected: str, new: str) -> None:
        if self.phase != expected:
            raise ProtocolAbort(
                f"user {self.index} asked to move {self.phase} -> {new}",
                blamed="server",
            )
        assert _ORDER.index(new) == _ORDER.index(expected) + 1
        self.phase = new

    # -- advertise / commit -------------------------------------------------

    def begin_round(self, rng: Random, server_commit: bytes) -> AdvertMsg:
        """Draw fresh per-round secrets and advertise public keys."""
        self.phase = PHASE_IDLE
        self._rng = rng
        self.seen_server_commit = server_commit
        self.mask_keys = KeyPair.generate(self.group, rng)
        self.id_keys = KeyPair.generate(self.group, rng)
        self.self_seed = rng.randbytes(SELF_SEED_BYTES)
        self.round_rand = rng.randbytes(32)
        self.rand_nonce = rng.randbytes(16)
        self._peer_handles: tuple[PeerHandle, ...] = ()
        self._pair_seeds: dict[bytes, bytes] = {}
        self._recipients: tuple[bytes, ...] = ()
        self._own_token = b""
        self._held_shares: dict[tuple[bytes, int], _StoredShare] = {}
        self._released: dict[bytes, set[int]] = {}
        self.forced_releases: list[bytes] = []
        self.seen_tree_commit = b""
        from .crypto import commit

        digest = commit(self.round_rand, self.rand_nonce).digest
        self._advance(PHASE_IDLE, PHASE_ADVERTISE)
        return AdvertMsg(
            share_pub=self.group.encode(self.id_keys.public),
            mask_pub=self.group.encode(self.mask_keys.public),
            rand_commit=digest,
        )

    def open_rand(self, tree_commit: bytes) -> RandOpenMsg:
        """Open the grouping randomness once the tree shape is committed."""
        self.seen_tree_commit = tree_commit
        self._advance(PHASE_ADVERTISE, PHASE_COMMIT)
        return RandOpenMsg(self.round_rand, self.rand_nonce)

    # -- share distribution --------------------------------------------------

    def receive_peer_list(self, msg: PeerListMsg) -> None:
        """Store opaque peer handles and derive one shared seed per peer."""
        self._own_token = msg.own_token
        self._peer_handles = msg.peers
        self._recipients = msg.share_recipients
        for handle in msg.peers:
            pub = int.from_bytes(handle.randomized_pub, "big")
            seed = derive_shared_seed(self.group, pub, self.mask_keys.secret)
            self._pair_seeds[handle.token] = seed
            self.counters.key_agreements_by_user[self.index] += 1

    def distribute_shares(self) -> list[ShareMsg]:
        """Emit one mask-key share and one self-seed share per recipient.

        Evaluation point i goes to the i-th recipient token; the share at
        the user's own position is retained locally.
        """
        self._advance(PHASE_COMMIT, PHASE_SHARE)
        n = len(self._recipients)
        t = self.share_threshold
        if n < t:
            raise ProtocolAbort(
                f"user {self.index} got {n} share recipients for threshold {t}",
                blamed="server",
            )
        assert self._rng is not None
        my_pos = self._recipients.index(self._own_token)
        key_shares = share_secret(self.mask_keys.secret, t, n, self._rng)
        seed_shares = share_secret(int.from_bytes(self.self_seed, "big"), t, n, self._rng)
        self.counters.shares_created += 2 * n
        out: list[ShareMsg] = []
        for pos, token in enumerate(self._recipients):
            for stype, share in ((SECRET_MASK_KEY, key_shares[pos]), (SECRET_SELF_SEED, seed_shares[pos])):
                msg = ShareMsg(
                    owner_token=self._own_token,
                    recipient_token=token,
                    secret_type=stype,
                    share_index=share.index,
                    threshold=t,
                    limbs=share.values,
                )
                if pos == my_pos:
                    self._store_share(msg)
                else:
                    out.append(msg)
        return out

    def _store_share(self, msg: ShareMsg) -> None:
        if msg.secret_type not in (SECRET_MASK_KEY, SECRET_SELF_SEED):
            raise ValueError(f"unknown secret type tag {msg.secret_type}")
        key = (msg.owner_token, msg.secret_type)
        if key in self._held_shares:
            raise ValueError("duplicate share for this owner and type")
        self._held_shares[key] = _StoredShare(msg)

    def receive_share(self, msg: ShareMsg) -> None:
        if msg.recipient_token != self._own_token:
            raise ValueError("share not addressed to this user")
        self._store_share(msg)

    # -- masked upload --------------------------------------------------------

    def mask_input(self, x: ParamVector) -> MaskedUploadMsg:
        """Blind the input with the self mask plus every pairwise mask.

        Intra-group masks span the full word; inter-group masks are
        confined to the low ``inter_mask_bits`` bits so the revealable
        high segment of a subgroup aggregate stays meaningful.
        """
        self._advance(PHASE_SHARE, PHASE_UPLOAD)
        m = len(x)
        y = vec_add_mod(x, prg_expand(self.self_seed, m, self.spec))
        self.counters.prg_by_user[self.index] += 1
        for handle in self._peer_handles:
            seed = self._pair_seeds.get(handle.token)
            if seed is None:
                raise ProtocolAbort(f"user {self.index} missing a peer seed", blamed="server")
            bits = None if handle.kind == "intra" else self.inter_mask_bits
            mask = prg_expand(seed, m, self.spec, mask_bits=bits)
            self.counters.prg_by_user[self.index] += 1
            y = vec_add_mod(y, mask) if handle.sign == 1 else vec_sub_mod(y, mask)
        return MaskedUploadMsg.from_vector(self._own_token, y.values)

    # -- unmask ----------------------------------------------------------------

    def unmask_response(self, req: UnmaskRequestMsg) -> UnmaskResponseMsg:
        """Release requested shares under the never-both rule.

        A request for the complementary type of an already-released target
        is refused unless the request marks the target as force-dropped
        (post-detection exclusion); overrides land in ``forced_releases``.
        """
        if self.phase == PHASE_UPLOAD:
            self._advance(PHASE_UPLOAD, PHASE_UNMASK)
        elif self.phase != PHASE_UNMASK:
            raise ProtocolAbort(
                f"unmask request in phase {self.phase}", blamed="server"
            )
        forced = set(req.forced)
        released: list[ShareMsg] = []
        refused: list[tuple[bytes, int]] = []
        for token, stype in req.targets:
            held = self._held_shares.get((token, stype))
            if held is None:
                continue
            done = self._released.setdefault(token, set())
            other = SECRET_MASK_KEY if stype == SECRET_SELF_SEED else SECRET_SELF_SEED
            if other in done:
                if token in forced and stype == SECRET_MASK_KEY:
                    self.forced_releases.append(token)
                else:
                    refused.append((token, stype))
                    continue
            done.add(stype)
            released.append(held.msg)
        return UnmaskResponseMsg(tuple(released), tuple(refused))

    # -- verification -----------------------------------------------------------

    def verify_reveal(self, setup, tree) -> None:
        """Check the post-upload opening against what this user saw."""
        from .orgtree import verify_setup

        t = setup.transcript
        if t.server_commit != self.seen_server_commit:
            raise ProtocolAbort("server randomness commitment changed", blamed="server")
        if t.tree_commit != self.seen_tree_commit:
            raise ProtocolAbort("tree commitment changed", blamed="server")
        verify_setup(setup, tree)

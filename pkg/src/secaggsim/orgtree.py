"""Oblivious random grouping over a hierarchical tree.

Users are sorted by jointly-randomized identities and partitioned into the
leaves of a d-ary tree of height h.  Two independent assignments are
derived from one protocol run: one tree scopes secret sharing, the other
scopes pairwise masking.  Masking peers are the circular neighbors inside
a leaf plus, per tree layer, the users at the same relative position in
the +/-1 (mod d) sibling subtrees.

Identity derivation is commitment-ordered so neither the server nor any
user can steer the grouping: the server commits its randomness before
seeing user keys, users commit theirs before the tree shape is fixed, and
each user's final identity hashes the XOR of everyone else's preliminary
identity, so it is determined by all parties except the user itself.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError, ProtocolAbort

_ID_TAG = b"identity-v1"
_FINAL_TAG = b"final-identity-v1"


# ---------------------------------------------------------------------------
# tree geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeConfig:
    """Geometry and masking parameters of the grouping tree."""

    height: int  # layers above the leaves
    degree: int  # children per internal node
    neighbor_radius: int = 1  # intra-group circular radius (kappa)
    inter_radius: int = 1  # sibling neighborhood radius at inter layers
    share_threshold: int = 2  # t for secret sharing inside a leaf

    def __post_init__(self) -> None:
        if self.height < 1 or self.degree < 2:
            raise ConfigError("tree needs height >= 1 and degree >= 2")
        if self.neighbor_radius < 1 or self.inter_radius < 1:
            raise ConfigError("neighbor radii must be >= 1")
        if self.share_threshold < 2:
            raise ConfigError("share threshold must be >= 2")

    @property
    def leaf_count(self) -> int:
        return self.degree**self.height

    def subgroup_size(self, n_users: int) -> int:
        return -(-n_users // self.leaf_count)

    def validate_for(self, n_users: int) -> None:
        g = self.leaf_count
        if n_users < 2 * g:
            raise ConfigError(f"{n_users} users cannot fill {g} subgroups with >= 2 each")
        smallest = n_users // g
        size = self.subgroup_size(n_users)
        if size < 2 * self.neighbor_radius + 1:
            raise ConfigError(
                f"subgroup size {size} < 2*kappa+1 = {2 * self.neighbor_radius + 1}"
            )
        if self.share_threshold > smallest:
            raise ConfigError(
                f"share threshold {self.share_threshold} exceeds smallest subgroup {smallest}"
            )

    def describe(self) -> bytes:
        """Canonical encoding of the tree shape for commitment."""
        return f"tree:h={self.height},d={self.degree}".encode()


# ---------------------------------------------------------------------------
# identities
# ---------------------------------------------------------------------------


def preliminary_identity(server_rand: bytes, pubkey: bytes, user_rand: bytes) -> bytes:
    """Per-user preliminary identity: HASH(R_s || pubkey || R_u)."""
    return hashlib.sha256(_ID_TAG + server_rand + pubkey + user_rand).digest()


def finalize_identities(preliminaries: list[bytes]) -> list[bytes]:
    """Final identity of user u hashes the XOR of all v != u preliminaries.

    Flipping any single user's randomness therefore changes every other
    user's final identity while leaving that user's own unchanged, which
    defeats identity grinding.
    """
    total = bytes(32)
    for p in preliminaries:
        total = bytes(a ^ b for a, b in zip(total, p))
    out = []
    for p in preliminaries:
        others = bytes(a ^ b for a, b in zip(total, p))
        out.append(hashlib.sha256(_FINAL_TAG + others).digest())
    return out


# ---------------------------------------------------------------------------
# assignment and peers
# ---------------------------------------------------------------------------


@dataclass
class Assignment:
    """Users partitioned into leaves, ordered by finalized identity."""

    tree: TreeConfig
    members: list[list[int]]  # leaf -> users in identity order
    leaf_of: list[int]  # user -> leaf index
    rank_of: list[int]  # user -> position inside its leaf

    @property
    def n_users(self) -> int:
        return len(self.leaf_of)

    def leaf_sizes(self) -> list[int]:
        return [len(m) for m in self.members]

    def to_json(self) -> str:
        """Stable audit dump of the grouping."""
        doc = {
            "schema": "assignment-v1",
            "height": self.tree.height,
            "degree": self.tree.degree,
            "members": self.members,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def assign_subgroups(finalized_ids: list[bytes], tree: TreeConfig) -> Assignment:
    """Sort users by finalized identity and slice into leaves.

    Leaf sizes differ by at most one; the larger leaves come first.  Ties
    on identity (negligible probability) break by user index so the
    assignment is a pure function of its inputs.
    """
    n = len(finalized_ids)
    g = tree.leaf_count
    if n < 2 * g:
        raise ConfigError(f"{n} users is too few for {g} subgroups of >= 2")
    order = sorted(range(n), key=lambda u: (finalized_ids[u], u))
    base, extra = divmod(n, g)
    members: list[list[int]] = []
    pos = 0
    for leaf in range(g):
        size = base + 1 if leaf < extra else base
        members.append(order[pos : pos + size])
        pos += size
    leaf_of = [0] * n
    rank_of = [0] * n
    for leaf, users in enumerate(members):
        for rank, u in enumerate(users):
            leaf_of[u] = leaf
            rank_of[u] = rank
    return Assignment(tree=tree, members=members, leaf_of=leaf_of, rank_of=rank_of)


@dataclass
class PeerSet:
    """Masking peers of one user: circular neighbors in its own leaf plus
    same-rank users in +/-1 (mod d) sibling subtrees at each layer."""

    intra: list[int] = field(default_factory=list)
    inter: list[tuple[int, int]] = field(default_factory=list)  # (peer, layer)

    def all_peers(self) -> list[int]:
        return self.intra + [p for p, _ in self.inter]


def _sibling_leaves(leaf: int, layer: int, tree: TreeConfig) -> list[int]:
    """Leaves reached by stepping the layer-th base-d digit by +/-1..radius."""
    stride = tree.degree ** (layer - 1)
    digit = (leaf // stride) % tree.degree
    rest = leaf - digit * stride
    out = []
    for step in range(1, tree.inter_radius + 1):
        for signed in (step, -step):
            nd = (digit + signed) % tree.degree
            if nd == digit:
                continue
            cand = rest + nd * stride
            if cand not in out:
                out.append(cand)
    return out


def build_peer_sets(assignment: Assignment) -> list[PeerSet]:
    """Derive every user's PeerSet; the relation is made symmetric.

    When a sibling leaf is smaller than the user's own, the matching rank
    wraps modulo the sibling size; the closure step then adds the reverse
    edge so every mask has both endpoints.
    """
    tree = assignment.tree
    n = assignment.n_users
    intra: list[set[int]] = [set() for _ in range(n)]
    inter: list[dict[int, int]] = [dict() for _ in range(n)]

    for users in assignment.members:
        size = len(users)
        for rank, u in enumerate(users):
            for step in range(1, tree.neighbor_radius + 1):
                for v in (users[(rank - step) % size], users[(rank + step) % size]):
                    if v != u:
                        intra[u].add(v)

    for leaf, users in enumerate(assignment.members):
        for layer in range(1, tree.height + 1):
            for sib in _sibling_leaves(leaf, layer, tree):
                sib_users = assignment.members[sib]
                for rank, u in enumerate(users):
                    v = sib_users[rank % len(sib_users)]
                    inter[u].setdefault(v, layer)
                    inter[v].setdefault(u, layer)  # symmetric closure

    out = []
    for u in range(n):
        out.append(
            PeerSet(
                intra=sorted(intra[u]),
                inter=sorted(inter[u].items()),
            )
        )
    return out


def masking_pairs(peer_sets: list[PeerSet]) -> list[tuple[int, int, str, int]]:
    """All unordered masking pairs as (u, v, kind, layer) with u < v by index."""
    pairs = []
    seen = set()
    for u, ps in enumerate(peer_sets):
        for v in ps.intra:
            key = (min(u, v), max(u, v))
            if key not in seen:
                seen.add(key)
                pairs.append((key[0], key[1], "intra", 0))
        for v, layer in ps.inter:
            key = (min(u, v), max(u, v))
            if key not in seen:
                seen.add(key)
                pairs.append((key[0], key[1], "inter", layer))
    return pairs


# ---------------------------------------------------------------------------
# commitment-ordered setup protocol
# ---------------------------------------------------------------------------


@dataclass
class SetupTranscript:
    """Everything the server must later open for verification."""

    server_rand: bytes
    server_nonce: bytes
    server_commit: bytes
    tree_desc: bytes
    tree_nonce: bytes
    tree_commit: bytes
    share_pubs: list[bytes]
    mask_pubs: list[bytes]
    user_rands: list[bytes]
    user_nonces: list[bytes]
    user_commits: list[bytes]


@dataclass
class TreeSetup:
    """Output of one grouping run: both assignments plus the transcript."""

    share_assignment: Assignment
    mask_assignment: Assignment
    share_ids: list[bytes]
    mask_ids: list[bytes]
    transcript: SetupTranscript


def run_tree_setup(
    tree: TreeConfig,
    server_rand: bytes,
    server_nonce: bytes,
    share_pubs: list[bytes],
    mask_pubs: list[bytes],
    user_rands: list[bytes],
    user_nonces: list[bytes],
) -> TreeSetup:
    """Execute the commitment-ordered grouping with all openings in hand.

    Message order (enforced by the caller's phase structure): the server
    commits its randomness; users advertise one-time public keys plus a
    commitment to their randomness; the server fixes and commits the tree
    shape; users open their randomness; identities and both assignments
    are computed.  ``verify_setup`` replays the openings afterwards.
    """
    from .crypto import commit

    n = len(share_pubs)
    tree.validate_for(n)
    server_c = commit(server_rand, server_nonce)
    tree_desc = tree.describe()
    tree_nonce = hashlib.sha256(b"tree-nonce" + server_nonce).digest()
    tree_c = commit(tree_desc, tree_nonce)
    user_commits = [commit(user_rands[u], user_nonces[u]).digest for u in range(n)]

    share_prelim = [preliminary_identity(server_rand, share_pubs[u], user_rands[u]) for u in range(n)]
    mask_prelim = [preliminary_identity(server_rand, mask_pubs[u], user_rands[u]) for u in range(n)]
    share_ids = finalize_identities(share_prelim)
    mask_ids = finalize_identities(mask_prelim)

    transcript = SetupTranscript(
        server_rand=server_rand,
        server_nonce=server_nonce,
        server_commit=server_c.digest,
        tree_desc=tree_desc,
        tree_nonce=tree_nonce,
        tree_commit=tree_c.digest,
        share_pubs=list(share_pubs),
        mask_pubs=list(mask_pubs),
        user_rands=list(user_rands),
        user_nonces=list(user_nonces),
        user_commits=user_commits,
    )
    return TreeSetup(
        share_assignment=assign_subgroups(share_ids, tree),
        mask_assignment=assign_subgroups(mask_ids, tree),
        share_ids=share_ids,
        mask_ids=mask_ids,
        transcript=transcript,
    )


def verify_setup(setup: TreeSetup, tree: TreeConfig) -> None:
    """Replay every commitment opening and the identity derivation.

    Raises ProtocolAbort naming the first party whose opening fails.  In
    the simulator this runs once on the shared transcript; every honest
    user would perform the identical computation.
    """
    from .crypto import Commitment, verify_commitment

    t = setup.transcript
    if not verify_commitment(Commitment(t.server_commit), t.server_rand, t.server_nonce):
        raise ProtocolAbort("server randomness opening failed", blamed="server")
    if t.tree_desc != tree.describe() or not verify_commitment(
        Commitment(t.tree_commit), t.tree_desc, t.tree_nonce
    ):
        raise ProtocolAbort("tree shape opening failed", blamed="server")
    for u, digest in enumerate(t.user_commits):
        if not verify_commitment(Commitment(digest), t.user_rands[u], t.user_nonces[u]):
            raise ProtocolAbort(f"user {u} randomness opening failed", blamed=f"user:{u}")

    share_prelim = [
        preliminary_identity(t.server_rand, t.share_pubs[u], t.user_rands[u])
        for u in range(len(t.share_pubs))
    ]
    mask_prelim = [
        preliminary_identity(t.server_rand, t.mask_pubs[u], t.user_rands[u])
        for u in range(len(t.mask_pubs))
    ]
    if finalize_identities(share_prelim) != setup.share_ids:
        raise ProtocolAbort("share-tree identities do not match openings", blamed="server")
    if finalize_identities(mask_prelim) != setup.mask_ids:
        raise ProtocolAbort("mask-tree identities do not match openings", blamed="server")
    if assign_subgroups(setup.share_ids, tree).members != setup.share_assignment.members:
        raise ProtocolAbort("share-tree assignment does not match identities", blamed="server")
    if assign_subgroups(setup.mask_ids, tree).members != setup.mask_assignment.members:
        raise ProtocolAbort("mask-tree assignment does not match identities", blamed="server")

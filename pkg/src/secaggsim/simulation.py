"""Scenario configuration, deterministic round orchestration, and reports.

A scenario fixes the population, tree shape, fixed-point layout, dropout
model, workload (synthetic drift or the toy classification task), attack
plan, and detection settings.  ``run_scenario`` executes the full
per-round pipeline: grouping setup, share distribution, masked upload
with dropout injection, unmask, subgroup aggregation with partial
disclosure, detection, exclusion, and the global update; it emits a CSV
of per-round metrics and a JSON transcript, both byte-stable for a fixed
(config, seed) pair.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import asdict, dataclass, field
from random import Random

import numpy as np

from . import detection as det
from .adversary import (
    AttackPlan,
    ToyTask,
    attacker_update,
    benign_update_synthetic,
    benign_update_task,
)
from .aggserver import AggServer, fedsgd_update
from .baseline import run_baseline_round
from .counters import OpCounters
from .crypto import GROUPS, DhGroup
from .errors import ConfigError
from .fixedpoint import ParamVector, SegmentSpec, dequantize_vector, quantize_vector, zeros
from .orgtree import TreeConfig
from .useragent import UserAgent
from .wire import SERVER, GlobalModelMsg, RevealMsg, StarTransport

REPORT_SCHEMA = "run-report-v1"
CSV_COLUMNS = [
    "round",
    "dropouts",
    "flagged",
    "std",
    "threshold",
    "DR",
    "CR",
    "FPR",
    "main_acc",
    "backdoor_acc",
    "main_loss",
    "n_eff",
]


def _sub_rng(seed: int, *labels) -> Random:
    tag = ("%d|" % seed + "|".join(map(str, labels))).encode()
    return Random(int.from_bytes(hashlib.sha256(tag).digest(), "big"))


def _sub_np_rng(seed: int, *labels) -> np.random.Generator:
    tag = ("np|%d|" % seed + "|".join(map(str, labels))).encode()
    return np.random.default_rng(int.from_bytes(hashlib.sha256(tag).digest(), "big"))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class SyntheticWorkload:
    """Benign updates X_t + Normal(drift_t, sigma_t^2) with decaying noise."""

    vector_len: int = 64
    drift_scale: float = 0.05
    sigma0: float = 0.2
    sigma_decay: float = 0.9
    sigma_floor: float = 0.01
    value_range: float = 4.0  # initial model coordinates ~ U(-range, range)


@dataclass
class TaskWorkload:
    samples_per_user: int = 8
    classes_per_user: int | None = None  # < n_classes gives non-iid data
    local_lr: float = 0.5
    lr_decay: float = 1.0  # per-round factor on the local learning rate
    min_lr: float = 0.0  # floor of the decayed learning rate
    weight_decay: float = 0.0
    noise: float = 0.6
    attacker_steps: int = 60
    attacker_lr: float = 0.5


@dataclass
class DetectionSettings:
    enabled: bool = True
    expansion: float = 1.2
    window: int = 5
    warmup_rounds: int | None = None
    epsilon: float | None = None  # disclosure radius; None = spec default
    low_bits_override: int | None = None
    record_pre_replacement: bool = False
    replacement: str = "min"  # flagged-distance replacement: "min" | "zero"
    min_threshold: float = 0.0
    rounded_comparison: bool = True


@dataclass
class ScenarioConfig:
    n_users: int = 243
    rounds: int = 20
    eta: float = 1.0
    seed: int = 0
    protocol: str = "tree"  # "tree" | "baseline"
    mode: str = "synthetic"  # "synthetic" | "toy_task"
    dh_group: str = "sim256"
    word_bits: int = 32
    frac_bits: int = 8
    inter_mask_margin_bits: int = 6
    tree_height: int = 3
    tree_degree: int = 3
    neighbor_radius: int = 2
    inter_radius: int = 1
    share_threshold: int = 3
    dropout_rate: float = 0.0
    dropout_timing: str = "after_shares"  # worst case; "uniform" adds post-upload drops
    detection: DetectionSettings = field(default_factory=DetectionSettings)
    synthetic: SyntheticWorkload = field(default_factory=SyntheticWorkload)
    task: TaskWorkload = field(default_factory=TaskWorkload)
    attack: AttackPlan | None = None

    # -- derived pieces ------------------------------------------------------

    def tree(self) -> TreeConfig:
        return TreeConfig(
            height=self.tree_height,
            degree=self.tree_degree,
            neighbor_radius=self.neighbor_radius,
            inter_radius=self.inter_radius,
            share_threshold=self.share_threshold,
        )

    def group(self) -> DhGroup:
        try:
            return GROUPS[self.dh_group]
        except KeyError:
            raise ConfigError(f"unknown dh group {self.dh_group!r}") from None

    def segment_spec(self) -> SegmentSpec:
        base = SegmentSpec(word_bits=self.word_bits, frac_bits=self.frac_bits, low_bits=self.frac_bits + 8)
        if self.detection.low_bits_override is not None:
            k = self.detection.low_bits_override
        else:
            n = self.tree().subgroup_size(self.n_users)
            eps = self.detection.epsilon
            if eps is None:
                eps = det.default_epsilon(base)
            k = det.segment_bits_for(det.reveal_threshold(n, eps), base)
        return SegmentSpec(word_bits=self.word_bits, frac_bits=self.frac_bits, low_bits=k)

    def inter_mask_bits(self, spec: SegmentSpec) -> int:
        bits = spec.low_bits - self.inter_mask_margin_bits
        if bits < 1:
            raise ConfigError(
                f"inter-group masks need >= 1 bit: low_bits={spec.low_bits}, "
                f"margin={self.inter_mask_margin_bits}"
            )
        return bits

    def validate(self) -> None:
        if self.protocol not in ("tree", "baseline"):
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.mode not in ("synthetic", "toy_task"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError("dropout rate must be in [0, 1)")
        if self.dropout_timing not in ("after_shares", "uniform"):
            raise ConfigError(f"unknown dropout timing {self.dropout_timing!r}")
        spec = self.segment_spec()
        if self.protocol == "tree":
            tree = self.tree()
            tree.validate_for(self.n_users)
            self.inter_mask_bits(spec)
            # the carry bound needs inter masks 2^margin times smaller than
            # the low segment; closure can add a few peers in uneven trees
            max_inter = 4 * self.inter_radius * self.tree_height
            if (1 << self.inter_mask_margin_bits) < max_inter:
                raise ConfigError(
                    f"margin {self.inter_mask_margin_bits} bits too small for "
                    f"up to {max_inter} inter-group masks per user"
                )
        else:
            if self.share_threshold > self.n_users:
                raise ConfigError("share threshold exceeds population")
        if self.attack is not None:
            self.attack.validate(self.n_users, self.rounds)
            bad = [a for a in self.attack.attacker_ids if not (0 <= a < self.n_users)]
            if bad:
                raise ConfigError(f"attacker ids out of range: {bad}")

    # -- (de)serialization -----------------------------------------------------

    def to_json(self) -> str:
        doc = asdict(self)
        if self.attack is not None:
            doc["attack"] = asdict(self.attack)
        return json.dumps(doc, sort_keys=True, indent=2)

    @staticmethod
    def from_dict(doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        for key, cls in (("detection", DetectionSettings), ("synthetic", SyntheticWorkload), ("task", TaskWorkload)):
            if key in doc and isinstance(doc[key], dict):
                doc[key] = cls(**doc[key])
        if doc.get("attack") is not None and isinstance(doc["attack"], dict):
            attack = dict(doc["attack"])
            attack["attacker_ids"] = tuple(attack["attacker_ids"])
            doc["attack"] = AttackPlan(**attack)
        return ScenarioConfig(**doc)

    @staticmethod
    def from_json(text: str) -> "ScenarioConfig":
        return ScenarioConfig.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# run report
# ---------------------------------------------------------------------------


@dataclass
class RoundRow:
    round_index: int
    dropouts: int
    flagged: list[int]
    std: float
    threshold: float
    dr: float
    cr: float
    fpr: float
    main_acc: float
    backdoor_acc: float
    main_loss: float
    n_eff: int


@dataclass
class RunReport:
    config: ScenarioConfig
    rows: list[RoundRow]
    counters: OpCounters
    metrics: dict[str, float]
    transcript: list[dict]
    final_main_acc: float = float("nan")
    final_backdoor_acc: float = float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(
                [
                    r.round_index,
                    r.dropouts,
                    "|".join(map(str, r.flagged)),
                    repr(r.std),
                    repr(r.threshold),
                    repr(r.dr),
                    repr(r.cr),
                    repr(r.fpr),
                    repr(r.main_acc),
                    repr(r.backdoor_acc),
                    repr(r.main_loss),
                    r.n_eff,
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "schema": REPORT_SCHEMA,
            "config": json.loads(self.config.to_json()),
            "metrics": self.metrics,
            "final": {
                "main_acc": self.final_main_acc,
                "backdoor_acc": self.final_backdoor_acc,
            },
            "counters": self.counters.as_dict(),
            "rounds": self.transcript,
        }
        return json.dumps(doc, sort_keys=True, indent=1)


# ---------------------------------------------------------------------------
# workloads
# ---------------------------------------------------------------------------


class _Workload:
    """Produces per-user inputs and knows the attack ground truth."""

    def __init__(self, config: ScenarioConfig, spec: SegmentSpec):
        self.config = config
        self.spec = spec
        self.plan = config.attack
        self.attackers = set(self.plan.attacker_ids) if self.plan else set()
        self.target_theta: np.ndarray | None = None
        if config.mode == "toy_task":
            self.task = ToyTask.generate(
                _sub_rng(config.seed, "task").getrandbits(63),
                config.n_users,
                samples_per_user=config.task.samples_per_user,
                noise=config.task.noise,
                classes_per_user=config.task.classes_per_user,
            )
            self.vector_len = self.task.model_dim
        else:
            self.task = None
            self.vector_len = config.synthetic.vector_len
            rng = _sub_np_rng(config.seed, "drift")
            self.drift_dir = rng.normal(0.0, 1.0, size=self.vector_len)
            self.drift_dir /= np.linalg.norm(self.drift_dir)

    def initial_model(self) -> ParamVector:
        if self.task is not None:
            return zeros(self.vector_len, self.spec)
        rng = _sub_np_rng(self.config.seed, "init")
        vals = rng.uniform(-self.config.synthetic.value_range, self.config.synthetic.value_range, self.vector_len)
        return quantize_vector(vals, self.spec)

    def _sigma(self, round_index: int) -> float:
        s = self.config.synthetic
        return max(s.sigma0 * (s.sigma_decay**round_index), s.sigma_floor)

    def attack_active(self, round_index: int) -> bool:
        return self.plan is not None and self.plan.is_active(round_index)

    def _refresh_target(self, model: ParamVector, round_index: int) -> None:
        assert self.task is not None and self.plan is not None
        theta = dequantize_vector(model)
        self.target_theta = self.task.train_backdoor_target(
            theta,
            steps=self.config.task.attacker_steps,
            lr=self.config.task.attacker_lr,
            seed=_sub_rng(self.config.seed, "target", round_index).getrandbits(32),
            cap=self.plan.cap,
            users=sorted(self.attackers),
        )

    def input_for(self, user: int, round_index: int, model: ParamVector) -> ParamVector:
        if self.attack_active(round_index) and user in self.attackers:
            if self.target_theta is None or (self.plan.target_refresh and self.task is not None):
                if self.task is not None:
                    self._refresh_target(model, round_index)
                else:
                    rng = _sub_np_rng(self.config.seed, "synthtarget")
                    self.target_theta = dequantize_vector(model) + rng.normal(0.0, 1.0, self.vector_len)
            scale = self.plan.scale_for(
                round_index, self.config.n_users, self.config.eta, self.config.tree().leaf_count
            )
            return attacker_update(model, self.target_theta, scale=scale, cap=self.plan.cap)
        if self.task is not None:
            lr = max(
                self.config.task.local_lr * self.config.task.lr_decay**round_index,
                self.config.task.min_lr,
            )
            return benign_update_task(
                model, self.task, user, lr, weight_decay=self.config.task.weight_decay
            )
        rng = _sub_np_rng(self.config.seed, "benign", round_index, user)
        drift = self.config.synthetic.drift_scale * self._sigma(round_index) / self.config.synthetic.sigma0
        return benign_update_synthetic(model, drift * self.drift_dir, self._sigma(round_index), rng)

    def evaluate(self, model: ParamVector) -> tuple[float, float]:
        if self.task is None:
            return float("nan"), float("nan")
        return self.task.evaluate(dequantize_vector(model))

    def main_loss(self, model: ParamVector) -> float:
        if self.task is None:
            return float("nan")
        theta = dequantize_vector(model)
        return self.task.loss(theta, self.task.test_x, self.task.test_y)


# ---------------------------------------------------------------------------
# scenario engine
# ---------------------------------------------------------------------------


@dataclass
class RoundResult:
    total: ParamVector
    n_eff: int
    aggregates: list
    detection: "det.DetectionRecord | None"
    flagged: set[int]
    new_model: ParamVector


def execute_round(
    *,
    server: AggServer,
    users: list[UserAgent],
    transport: StarTransport,
    model: ParamVector,
    inputs: dict[int, ParamVector],
    round_seed: tuple[int, int],
    pre_drop: set[int] | None = None,
    detector: "det.Detector | None" = None,
    eta: float = 1.0,
    verify: bool = True,
) -> RoundResult:
    """One full protocol round over explicit per-user inputs.

    ``inputs`` maps every non-dropped user to its vector.  ``round_seed``
    is (scenario seed, round index); all per-party randomness derives from
    it.  When ``detector`` is None no subgroup is flagged (void subgroups
    are still excluded).
    """
    seed, t = round_seed
    pre_drop = pre_drop or set()
    n_users = len(users)

    commit_msg = server.begin_round(n_users, _sub_rng(seed, "server", t))
    commit_bytes = commit_msg.to_bytes()
    for u, agent in enumerate(users):
        transport.deliver(SERVER, f"user:{u}", commit_bytes)
        advert = agent.begin_round(_sub_rng(seed, "user", t, u), commit_msg.digest)
        transport.deliver(f"user:{u}", SERVER, advert.to_bytes())
        server.receive_advert(u, advert)

    tree_msg = server.commit_tree()
    tree_bytes = tree_msg.to_bytes()
    for u, agent in enumerate(users):
        transport.deliver(SERVER, f"user:{u}", tree_bytes)
        opening = agent.open_rand(tree_msg.tree_digest)
        transport.deliver(f"user:{u}", SERVER, opening.to_bytes())
        server.receive_open(u, opening)
    server.finish_setup()

    for u, agent in enumerate(users):
        peer_msg = server.peer_list_for(u)
        transport.deliver(SERVER, f"user:{u}", peer_msg.to_bytes())
        agent.receive_peer_list(peer_msg)

    for u, agent in enumerate(users):
        for share in agent.distribute_shares():
            transport.deliver(f"user:{u}", SERVER, share.to_bytes())
            recipient = server.route_share(share)
            transport.deliver(SERVER, f"user:{recipient}", share.to_bytes())
            users[recipient].receive_share(share)

    for u in pre_drop:
        server.mark_dropout(u)
    for u, agent in enumerate(users):
        if u in pre_drop:
            continue
        upload = agent.mask_input(inputs[u])
        transport.deliver(f"user:{u}", SERVER, upload.to_bytes())
        server.receive_upload(u, upload)

    if verify:
        # post-upload opening; every honest user runs this same check
        tr = server.setup.transcript
        reveal_bytes = RevealMsg(
            server_rand=tr.server_rand,
            server_nonce=tr.server_nonce,
            tree_desc=tr.tree_desc,
            tree_nonce=tr.tree_nonce,
            user_records=tuple(
                (tr.share_pubs[u], tr.mask_pubs[u], tr.user_rands[u], tr.user_nonces[u])
                for u in range(n_users)
            ),
        ).to_bytes()
        for u in server.online_users:
            transport.deliver(SERVER, f"user:{u}", reveal_bytes)
        users[server.online_users[0]].verify_reveal(server.reveal(), server.tree)

    for u, req in server.unmask_requests().items():
        transport.deliver(SERVER, f"user:{u}", req.to_bytes())
        resp = users[u].unmask_response(req)
        transport.deliver(f"user:{u}", SERVER, resp.to_bytes())
        server.receive_unmask(u, resp)

    aggregates = server.aggregate_subgroups()

    record = detector.detect(aggregates, model) if detector is not None else None
    flagged = set(record.flagged) if record is not None else set()

    for u, req in server.exclusion_requests(flagged).items():
        transport.deliver(SERVER, f"user:{u}", req.to_bytes())
        resp = users[u].unmask_response(req)
        transport.deliver(f"user:{u}", SERVER, resp.to_bytes())
        server.receive_unmask(u, resp)

    total, n_eff = server.finalize(flagged, model)
    new_model = fedsgd_update(model, total, n_eff, eta)
    model_bytes = GlobalModelMsg.from_vector(new_model.values).to_bytes()
    for u in range(n_users):
        transport.deliver(SERVER, f"user:{u}", model_bytes)

    return RoundResult(
        total=total,
        n_eff=n_eff,
        aggregates=aggregates,
        detection=record,
        flagged=flagged,
        new_model=new_model,
    )


def _draw_dropouts(config: ScenarioConfig, round_index: int) -> tuple[set[int], set[int]]:
    """(dropped before upload, dropped after upload) for this round."""
    if config.dropout_rate <= 0:
        return set(), set()
    rng = _sub_rng(config.seed, "dropout", round_index)
    count = int(round(config.dropout_rate * config.n_users))
    chosen = rng.sample(range(config.n_users), count)
    if config.dropout_timing == "after_shares":
        return set(chosen), set()
    pre, post = set(), set()
    for u in chosen:
        (pre if rng.random() < 0.5 else post).add(u)
    return pre, post


def run_scenario(config: ScenarioConfig) -> RunReport:
    config.validate()
    if config.protocol == "baseline":
        return _run_baseline_scenario(config)
    return _run_tree_scenario(config)


def _run_tree_scenario(config: ScenarioConfig) -> RunReport:
    tree = config.tree()
    spec = config.segment_spec()
    group = config.group()
    inter_bits = config.inter_mask_bits(spec)
    counters = OpCounters()
    transport = StarTransport(counters)
    workload = _Workload(config, spec)

    server = AggServer(
        tree=tree, group=group, spec=spec, inter_mask_bits=inter_bits, counters=counters
    )
    users = [
        UserAgent(
            u,
            group=group,
            spec=spec,
            inter_mask_bits=inter_bits,
            share_threshold=tree.share_threshold,
            counters=counters,
        )
        for u in range(config.n_users)
    ]
    detector = det.Detector(
        det.DetectionConfig(
            expansion=config.detection.expansion,
            window=config.detection.window,
            warmup_rounds=config.detection.warmup_rounds,
            record_pre_replacement=config.detection.record_pre_replacement,
            replacement=config.detection.replacement,
            min_threshold=config.detection.min_threshold,
            rounded_comparison=config.detection.rounded_comparison,
        )
    )

    model = workload.initial_model()
    rows: list[RoundRow] = []
    transcript: list[dict] = []
    metric_rounds: list[det.MetricsRound] = []
    main_acc, backdoor_acc = workload.evaluate(model)

    for t in range(config.rounds):
        pre_drop, post_drop = _draw_dropouts(config, t)
        # post-upload dropouts arrive too late to lose their input
        _ = post_drop
        inputs = {
            u: workload.input_for(u, t, model)
            for u in range(config.n_users)
            if u not in pre_drop
        }
        result = execute_round(
            server=server,
            users=users,
            transport=transport,
            model=model,
            inputs=inputs,
            round_seed=(config.seed, t),
            pre_drop=pre_drop,
            detector=detector if config.detection.enabled else None,
            eta=config.eta,
        )
        model = result.new_model
        record = result.detection
        flagged = result.flagged
        n_eff = result.n_eff

        main_acc, backdoor_acc = workload.evaluate(model)
        attackers_active = (
            sorted(workload.attackers) if workload.attack_active(t) else []
        )
        mask_leaf_of = server.setup.mask_assignment.leaf_of
        attacker_leaves = {mask_leaf_of[a] for a in attackers_active if a not in pre_drop}
        in_flagged = sum(
            1 for a in attackers_active if a not in pre_drop and mask_leaf_of[a] in flagged
        )
        detection_active = (
            config.detection.enabled and detector.round_index > detector.config.effective_warmup
        )
        metric_rounds.append(
            det.MetricsRound(
                detection_active=detection_active,
                total_subgroups=tree.leaf_count,
                attacker_leaves=attacker_leaves,
                flagged_leaves=flagged,
                attackers_active=len([a for a in attackers_active if a not in pre_drop]),
                attackers_in_flagged=in_flagged,
            )
        )
        metrics = det.compute_metrics(metric_rounds)
        rows.append(
            RoundRow(
                round_index=t,
                dropouts=len(pre_drop),
                flagged=sorted(flagged),
                std=record.std_sequence[0] if record else float("nan"),
                threshold=record.threshold if record else float("nan"),
                dr=metrics["DR"],
                cr=metrics["CR"],
                fpr=metrics["FPR"],
                main_acc=main_acc,
                backdoor_acc=backdoor_acc,
                main_loss=workload.main_loss(model),
                n_eff=n_eff,
            )
        )
        entry = {
            "round": t,
            "dropouts": sorted(pre_drop),
            "flagged": sorted(flagged),
            "n_eff": n_eff,
        }
        if record is not None:
            entry["detection"] = record.to_json_dict()
        transcript.append(entry)

    metrics = det.compute_metrics(metric_rounds)
    return RunReport(
        config=config,
        rows=rows,
        counters=counters,
        metrics=metrics,
        transcript=transcript,
        final_main_acc=main_acc,
        final_backdoor_acc=backdoor_acc,
    )


def _run_baseline_scenario(config: ScenarioConfig) -> RunReport:
    spec = config.segment_spec()
    group = config.group()
    counters = OpCounters()
    workload = _Workload(config, spec)
    model = workload.initial_model()
    rows: list[RoundRow] = []
    transcript: list[dict] = []
    main_acc, backdoor_acc = workload.evaluate(model)

    for t in range(config.rounds):
        pre_drop, _ = _draw_dropouts(config, t)
        inputs = [workload.input_for(u, t, model) for u in range(config.n_users)]
        result = run_baseline_round(
            inputs,
            threshold=config.share_threshold,
            group=group,
            spec=spec,
            rng=_sub_rng(config.seed, "baseline", t),
            dropouts=pre_drop,
            counters=counters,
        )
        model = fedsgd_update(model, result.total, len(result.included), config.eta)
        main_acc, backdoor_acc = workload.evaluate(model)
        rows.append(
            RoundRow(
                round_index=t,
                dropouts=len(pre_drop),
                flagged=[],
                std=float("nan"),
                threshold=float("nan"),
                dr=float("nan"),
                cr=float("nan"),
                fpr=0.0,
                main_acc=main_acc,
                backdoor_acc=backdoor_acc,
                main_loss=workload.main_loss(model),
                n_eff=len(result.included),
            )
        )
        transcript.append({"round": t, "dropouts": sorted(pre_drop), "flagged": [], "n_eff": len(result.included)})

    return RunReport(
        config=config,
        rows=rows,
        counters=counters,
        metrics={"DR": float("nan"), "CR": float("nan"), "FPR": 0.0},
        transcript=transcript,
        final_main_acc=main_acc,
        final_backdoor_acc=backdoor_acc,
    )


# ---------------------------------------------------------------------------
# benchmark grid
# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    protocol: str
    n_users: int
    tree_shape: str
    vector_len: int
    dropout_rate: float
    per_user_prg: float
    per_user_bytes: float
    cancellations_per_dropout: float
    server_prg: int
    wall_ms: float

    @staticmethod
    def csv_header() -> list[str]:
        return [
            "protocol",
            "n_users",
            "tree_shape",
            "vector_len",
            "dropout_rate",
            "per_user_prg",
            "per_user_bytes",
            "cancellations_per_dropout",
            "server_prg",
            "wall_ms",
        ]

    def csv_row(self) -> list:
        return [
            self.protocol,
            self.n_users,
            self.tree_shape,
            self.vector_len,
            repr(self.dropout_rate),
            repr(self.per_user_prg),
            repr(self.per_user_bytes),
            repr(self.cancellations_per_dropout),
            self.server_prg,
            repr(self.wall_ms),
        ]


def bench_once(config: ScenarioConfig) -> BenchRow:
    """Single-round instrumented run used by the benchmark grid."""
    config = ScenarioConfig.from_dict(json.loads(config.to_json()))
    config.rounds = 1
    config.detection.enabled = False
    started = time.perf_counter()
    report = run_scenario(config)
    wall_ms = (time.perf_counter() - started) * 1e3
    c = report.counters
    n_drop = int(round(config.dropout_rate * config.n_users))
    shape = (
        f"{config.tree_height}x{config.tree_degree}" if config.protocol == "tree" else "flat"
    )
    return BenchRow(
        protocol=config.protocol,
        n_users=config.n_users,
        tree_shape=shape,
        vector_len=config.synthetic.vector_len,
        dropout_rate=config.dropout_rate,
        per_user_prg=c.per_user_prg(config.n_users),
        per_user_bytes=c.per_user_bytes(config.n_users),
        cancellations_per_dropout=(c.mask_cancellations / n_drop) if n_drop else 0.0,
        server_prg=c.prg_server,
        wall_ms=wall_ms,
    )


def bench_grid(configs: list[ScenarioConfig]) -> list[BenchRow]:
    return [bench_once(c) for c in configs]


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BenchRow.csv_header())
    for row in rows:
        writer.writerow(row.csv_row())
    return buf.getvalue()

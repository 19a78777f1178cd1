"""Federated training loop with reference-regulated optimizer budgets.

Round flow (round index t starts at 1):

1. the server broadcasts the current global weights and scores them on its
   held-out validation shard (this is the global loss used for selection
   distances),
2. every device trains locally from the broadcast weights under its own
   iteration budget; at t = 1 each device also fine-tunes its reference
   provider, and from t = 2 on the budget is re-regulated whenever the
   reference loss undercuts the device's last training loss,
3. trained weights are pulled toward the broadcast weights in proportion
   to the output divergence between the two models (distillation),
4. the devices whose losses sit closest to the global loss are selected,
5. the selected weights are aggregated into the next global model,
6. training stops early once the selected-mean loss series plateaus.

Every step is deterministic for a fixed config: all randomness flows from
``FedConfig.seed`` through named seed derivations, and devices are always
reduced in device-id order no matter how many workers ran them.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataprep, dfo, qmodels, refmodel
from .dataprep import DataError, EncodedDataset, FeatureScaler
from .dfo import Budget, ObjectiveError, OptimizerTrace, RegulationStrategy
from .qmodels import QModel

AGGREGATIONS = ("weighted_mean", "selected_mean")
REF_KINDS = ("classical_baseline", "replay")


class ExperimentError(RuntimeError):
    """Run aborted; .records holds the rounds completed before the abort."""

    def __init__(self, message: str, records=None):
        super().__init__(message)
        self.records = records or []


@dataclass(frozen=True)
class DataSpec:
    """Synthetic-generator and preprocessing parameters for one experiment."""

    samples_per_device: int = 200
    sequence_length: int = 48
    motifs: tuple[str, str] = ("AAAAGGGGAAAA", "TTTTCCCCTTTT")
    noise: float = 0.05
    test_fraction: float = 0.25
    server_samples: int = 100
    angle_max: float = math.pi

    def __post_init__(self):
        if self.samples_per_device < 4:
            raise DataError("samples_per_device must be >= 4")
        if self.server_samples < 2:
            raise DataError("server_samples must be >= 2")
        if not 0.0 < self.test_fraction < 1.0:
            raise DataError("test_fraction must be in (0, 1)")


@dataclass(frozen=True)
class RefSpec:
    """Which reference provider devices use and how it is trained/loaded."""

    kind: str = "classical_baseline"
    epochs: int = 300
    learning_rate: float = 0.5
    replay_path: str | None = None

    def __post_init__(self):
        if self.kind not in REF_KINDS:
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "replay" and not self.replay_path:
            raise ValueError("replay reference needs replay_path")


@dataclass(frozen=True)
class FedConfig:
    """Everything one federated run depends on.

    ``regulation=None`` is the plain FedAvg baseline: budgets stay at
    ``init_maxiter`` forever. ``selection_fraction=1`` selects everyone,
    ``distill_lambda=0`` disables the distillation pull and ``epsilon=0``
    disables early termination.
    """

    model: QModel
    num_devices: int = 5
    rounds: int = 10
    init_maxiter: int = 10
    maxiter_cap: int = dfo.MAXITER_CAP
    regulation: RegulationStrategy | None = None
    selection_fraction: float = 1.0
    epsilon: float = 0.0
    distill_lambda: float = 0.0
    aggregation: str = "weighted_mean"
    optimizer: str = "nelder_mead"
    seed: int = 0
    data: DataSpec = field(default_factory=DataSpec)
    ref: RefSpec = field(default_factory=RefSpec)
    probe_size: int = 16
    init_penalty: float = 0.0
    init_scale: float = math.pi
    workers: int = 1

    def __post_init__(self):
        if self.num_devices < 1:
            raise ValueError("num_devices must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        Budget(self.init_maxiter, self.maxiter_cap)  # range check
        if not 0.0 < self.selection_fraction <= 1.0:
            raise ValueError("selection_fraction must be in (0, 1]")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.distill_lambda < 0:
            raise ValueError("distill_lambda must be >= 0")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.optimizer not in dfo.METHODS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.probe_size < 1:
            raise ValueError("probe_size must be >= 1")
        if self.init_penalty < 0:
            raise ValueError("init_penalty must be >= 0")
        if self.init_scale <= 0:
            raise ValueError("init_scale must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class DeviceState:
    """One client: its data shards, reference provider, and budget."""

    device_id: int
    train: EncodedDataset
    heldout: EncodedDataset
    provider: object
    weight: float
    maxiter: int
    loss_history: list[float] = field(default_factory=list)
    params: np.ndarray | None = None
    failed_round: int | None = None


@dataclass
class DeviceRoundStats:
    device_id: int
    loss: float | None
    maxiter_used: int
    evals: int
    ref_loss: float | None
    regulated: bool
    failed: bool
    objective_history: list[float]


@dataclass
class RoundRecord:
    round: int
    devices: list[DeviceRoundStats]
    global_loss: float
    server_val_loss: float
    mean_train_loss: float
    selected: list[int]
    selected_loss_mean: float
    cumulative_evals: int
    terminated: bool = False
    termination_reason: str | None = None
    wall_time: float = 0.0  # persisted separately from the deterministic record


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str | None = None


def derive_seed(root: int, *path: int) -> int:
    """Stable child seed for a named position in the experiment tree."""
    ss = np.random.SeedSequence(entropy=(int(root),) + tuple(int(p) for p in path))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    devices_train: list[EncodedDataset]
    devices_heldout: list[EncodedDataset]
    server_shard: EncodedDataset


def prepare_data(cfg: FedConfig) -> PreparedData:
    """Generate per-device shards plus the server validation shard.

    All shards come from one generator stream; PCA and the angle scaler are
    fitted on the pooled device training features only, then applied
    everywhere, mirroring a fixed server-published encoding.
    """
    spec = cfg.data
    n_qubits = cfg.model.num_qubits
    total = spec.samples_per_device * cfg.num_devices + spec.server_samples
    seqs = dataprep.synth_genomic(
        total,
        spec.sequence_length,
        motifs=spec.motifs,
        noise=spec.noise,
        seed=derive_seed(cfg.seed, 0),
    )
    ds = dataprep.encode_sequences(seqs)
    order = np.random.default_rng(derive_seed(cfg.seed, 1)).permutation(len(ds))
    ds = ds.subset(order)

    shards = []
    for i in range(cfg.num_devices):
        lo = i * spec.samples_per_device
        shards.append(ds.subset(np.arange(lo, lo + spec.samples_per_device)))
    server_raw = ds.subset(
        np.arange(cfg.num_devices * spec.samples_per_device, len(ds))
    )

    splits = [
        dataprep.split_dataset(s, spec.test_fraction, seed=derive_seed(cfg.seed, 2, i))
        for i, s in enumerate(shards)
    ]
    pooled_train = np.vstack([tr.features for tr, _ in splits])
    pca = dataprep.pca_fit(pooled_train, n_qubits)
    scaler = FeatureScaler(angle_max=spec.angle_max).fit(
        dataprep.pca_transform(pca, pooled_train)
    )

    def project(d: EncodedDataset) -> EncodedDataset:
        return EncodedDataset(
            scaler.transform(dataprep.pca_transform(pca, d.features)), d.labels
        )

    return PreparedData(
        devices_train=[project(tr) for tr, _ in splits],
        devices_heldout=[project(te) for _, te in splits],
        server_shard=project(server_raw),
    )


def _make_provider(cfg: FedConfig, device_id: int):
    if cfg.ref.kind == "classical_baseline":
        return refmodel.BaselineProvider(
            refmodel.TrainConfig(
                epochs=cfg.ref.epochs,
                learning_rate=cfg.ref.learning_rate,
                seed=derive_seed(cfg.seed, 3, device_id),
            )
        )
    records = refmodel.load_replay(cfg.ref.replay_path)
    if device_id not in records:
        raise ExperimentError(
            f"replay file {cfg.ref.replay_path} has no record for device {device_id}"
        )
    return refmodel.ReplayProvider(records[device_id])


def init_devices(cfg: FedConfig, prepared: PreparedData) -> list[DeviceState]:
    sizes = [len(t) for t in prepared.devices_train]
    total = sum(sizes)
    return [
        DeviceState(
            device_id=i,
            train=prepared.devices_train[i],
            heldout=prepared.devices_heldout[i],
            provider=_make_provider(cfg, i),
            weight=sizes[i] / total,
            maxiter=cfg.init_maxiter,
        )
        for i in range(cfg.num_devices)
    ]


# ---------------------------------------------------------------------------
# per-round operations
# ---------------------------------------------------------------------------


def local_train(
    device: DeviceState, theta_g: np.ndarray, round_index: int, cfg: FedConfig
) -> DeviceRoundStats:
    """Fine-tune (round 1), re-regulate the budget, then optimize locally.

    Training starts from the broadcast weights. The objective is the
    shot-sampled training loss (plus the optional pull-to-broadcast
    penalty), with the sampling seed fixed per (run, device, round) so the
    optimizer sees a deterministic landscape. On a non-finite objective the
    device is marked failed for this round and keeps its previous weights.
    """
    if round_index == 1 and not getattr(device.provider, "_fine_tuned", False):
        device.provider.fine_tune(device.train)

    ref_loss = None
    regulated = False
    if round_index > 1 and cfg.regulation is not None and device.loss_history:
        ref_loss = device.provider.eval_loss(device.heldout, round_index)
        last = device.loss_history[-1]
        if ref_loss < last:
            new_budget = dfo.regulate(
                cfg.regulation, device.maxiter, last, ref_loss, cfg.maxiter_cap
            )
            regulated = new_budget != device.maxiter
            device.maxiter = new_budget

    sample_seed = derive_seed(cfg.seed, 4, device.device_id, round_index)

    def objective(w):
        value = qmodels.loss(cfg.model, device.train, w, seed=sample_seed)
        if cfg.init_penalty > 0.0:
            value += cfg.init_penalty * float(np.sum((w - theta_g) ** 2))
        return value

    try:
        trace = dfo.minimize(
            objective,
            theta_g,
            Budget(device.maxiter, cfg.maxiter_cap),
            method=cfg.optimizer,
            seed=derive_seed(cfg.seed, 5, device.device_id, round_index),
        )
    except ObjectiveError as exc:
        device.failed_round = round_index
        return DeviceRoundStats(
            device_id=device.device_id,
            loss=None,
            maxiter_used=device.maxiter,
            evals=exc.trace.evals_used,
            ref_loss=ref_loss,
            regulated=regulated,
            failed=True,
            objective_history=list(exc.trace.objective_history),
        )

    device.params = trace.best_params
    device.loss_history.append(trace.best_value)
    device.failed_round = None
    return DeviceRoundStats(
        device_id=device.device_id,
        loss=trace.best_value,
        maxiter_used=device.maxiter,
        evals=trace.evals_used,
        ref_loss=ref_loss,
        regulated=regulated,
        failed=False,
        objective_history=list(trace.objective_history),
    )


def distill_step(
    theta_i: np.ndarray,
    theta_g: np.ndarray,
    probe: EncodedDataset,
    lam: float,
    model: QModel,
    seed: int = 0,
) -> np.ndarray:
    """Pull local weights toward the global ones by the mean probe KL.

    kappa = mean over probe rows of KL(global output || local output), and
    the update is theta_i + c (theta_g - theta_i) with c = min(lam * kappa,
    1), so the step never overshoots the global weights and never increases
    the distance to them. A non-finite kappa leaves theta_i unchanged.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    theta_i = np.asarray(theta_i, dtype=float)
    theta_g = np.asarray(theta_g, dtype=float)
    if lam == 0.0 or len(probe) == 0:
        return theta_i.copy()
    p_global = qmodels.forward_batch(model, probe.features, theta_g, seed=seed)
    p_local = qmodels.forward_batch(model, probe.features, theta_i, seed=seed)
    kls = [
        refmodel.kl_divergence(p_global[i], p_local[i])
        for i in range(p_global.shape[0])
    ]
    kappa = float(np.mean(kls))
    if not math.isfinite(kappa):
        return theta_i.copy()
    c = min(lam * kappa, 1.0)
    return theta_i + c * (theta_g - theta_i)


def select_clients(
    losses_by_id: dict[int, float], global_loss: float, fraction: float
) -> list[int]:
    """Device ids whose losses sit closest to the global loss.

    Picks the max(1, round(fraction * N)) smallest distances d_i =
    |L_i - L_g| (rounding half-up), breaking distance ties in favor of the
    lower device id. Returns ids in ascending order.
    """
    if not losses_by_id:
        raise ValueError("no devices with a current loss")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if not math.isfinite(global_loss):
        raise ValueError(f"global_loss must be finite, got {global_loss}")
    n = len(losses_by_id)
    size = max(1, math.floor(fraction * n + 0.5))
    ranked = sorted(
        losses_by_id, key=lambda i: (abs(losses_by_id[i] - global_loss), i)
    )
    return sorted(ranked[:size])


def aggregate(
    params_by_id: dict[int, np.ndarray],
    weights_by_id: dict[int, float],
    selected: list[int],
    mode: str = "weighted_mean",
) -> np.ndarray:
    """Combine selected device weights into the next global vector.

    ``weighted_mean`` renormalizes the data-share weights over the
    participants; ``selected_mean`` averages them plainly. The reduction
    always runs in ascending device-id order, so the result is independent
    of dict insertion order and thread scheduling.
    """
    if mode not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {mode!r}")
    if not selected:
        raise ValueError("cannot aggregate an empty selection")
    ids = sorted(selected)
    missing = [i for i in ids if i not in params_by_id]
    if missing:
        raise ValueError(f"no trained weights for devices {missing}")
    if mode == "selected_mean":
        shares = {i: 1.0 / len(ids) for i in ids}
    else:
        total = sum(weights_by_id[i] for i in ids)
        if total <= 0:
            raise ValueError("participant weights sum to zero")
        shares = {i: weights_by_id[i] / total for i in ids}
    out = np.zeros_like(next(iter(params_by_id.values())), dtype=float)
    for i in ids:
        out = out + shares[i] * np.asarray(params_by_id[i], dtype=float)
    return out


def check_termination(loss_series: list[float], t: int, cfg: FedConfig) -> StopDecision:
    """Stop once the relative change of the server loss falls under epsilon
    (checked from round 2 on) or the round cap is reached. epsilon = 0
    disables the plateau rule since the comparison is strict."""
    if t >= 2 and len(loss_series) >= 2:
        cur, prev = loss_series[-1], loss_series[-2]
        denom = max(abs(cur), 1e-300)
        if abs(cur - prev) / denom < cfg.epsilon:
            return StopDecision(True, "plateau")
    if t >= cfg.rounds:
        return StopDecision(True, "max_rounds")
    return StopDecision(False, None)


# ---------------------------------------------------------------------------
# the experiment loop
# ---------------------------------------------------------------------------


def _initial_weights(cfg: FedConfig) -> np.ndarray:
    # Wide init matters: the feature map is diagonal after its Hadamard
    # layer, so near-zero ansatz weights leave every sample at uniform
    # measurement probabilities (a flat, signal-free region of the loss).
    rng = np.random.default_rng(derive_seed(cfg.seed, 6))
    return rng.uniform(-cfg.init_scale, cfg.init_scale, cfg.model.num_weights)


def _probe(dataset: EncodedDataset, size: int) -> EncodedDataset:
    take = min(size, len(dataset))
    return dataset.subset(np.arange(take))


def run_experiment(
    cfg: FedConfig, prepared: PreparedData | None = None
) -> list[RoundRecord]:
    """Run the full federated experiment; returns one record per round.

    ``prepared`` mainly serves tests that inject tiny datasets; by default
    data is generated from the config. Identical configs (including seed)
    produce identical records apart from wall_time. Raises ExperimentError
    (with partial records attached) if every device fails inside a round.
    """
    if prepared is None:
        prepared = prepare_data(cfg)
    devices = init_devices(cfg, prepared)
    theta_g = _initial_weights(cfg)
    records: list[RoundRecord] = []
    selected_loss_series: list[float] = []
    cumulative_evals = 0

    for t in range(1, cfg.rounds + 1):
        started = time.perf_counter()
        server_seed = derive_seed(cfg.seed, 7, t)
        global_loss = qmodels.loss(
            cfg.model, prepared.server_shard, theta_g, seed=server_seed
        )

        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                stats = list(
                    pool.map(lambda d: local_train(d, theta_g, t, cfg), devices)
                )
        else:
            stats = [local_train(d, theta_g, t, cfg) for d in devices]
        stats.sort(key=lambda s: s.device_id)

        alive = [d for d in devices if d.failed_round != t]
        if not alive:
            raise ExperimentError(f"every device failed in round {t}", records)

        if cfg.distill_lambda > 0.0:
            for d in alive:
                d.params = distill_step(
                    d.params,
                    theta_g,
                    _probe(d.train, cfg.probe_size),
                    cfg.distill_lambda,
                    cfg.model,
                    seed=derive_seed(cfg.seed, 8, d.device_id, t),
                )

        losses_by_id = {d.device_id: d.loss_history[-1] for d in alive}
        selected = select_clients(losses_by_id, global_loss, cfg.selection_fraction)
        theta_g = aggregate(
            {d.device_id: d.params for d in alive},
            {d.device_id: d.weight for d in alive},
            selected,
            cfg.aggregation,
        )

        selected_mean = float(np.mean([losses_by_id[i] for i in selected]))
        selected_loss_series.append(selected_mean)
        weight_total = sum(d.weight for d in alive)
        mean_train = float(
            sum(d.weight * losses_by_id[d.device_id] for d in alive) / weight_total
        )
        server_val_loss = qmodels.loss(
            cfg.model, prepared.server_shard, theta_g, seed=derive_seed(cfg.seed, 9, t)
        )
        cumulative_evals += sum(s.evals for s in stats)

        record = RoundRecord(
            round=t,
            devices=stats,
            global_loss=global_loss,
            server_val_loss=server_val_loss,
            mean_train_loss=mean_train,
            selected=selected,
            selected_loss_mean=selected_mean,
            cumulative_evals=cumulative_evals,
            wall_time=time.perf_counter() - started,
        )
        decision = check_termination(selected_loss_series, t, cfg)
        if decision.stop:
            record.terminated = True
            record.termination_reason = decision.reason
        records.append(record)
        if decision.stop:
            break
    return records

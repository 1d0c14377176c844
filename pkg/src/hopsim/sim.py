"""Scenario orchestration.

Binds per-radar scheduling agents to the signal channel, runs frames and
episodes on a common clock, and collects strategy trajectories,
interference rates, regret curves, the empirical joint distribution, and
range profiles. A run is fully deterministic given its config and seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import signal as sig
from .game import (
    JointDistribution,
    MixedStrategy,
    RegretLedger,
    UtilityTable,
    empirical_joint,
    external_regret,
    cce_deviation_gap,
    pure_strategy,
)
from .hopping import (
    DEFAULT_KAPPA,
    DEFAULT_LOSS_CLIP_DB,
    DEFAULT_PESSIMISTIC_FLOOR_DB,
    NashHopperState,
    NoRegretState,
    init_nash_hopper,
    init_noregret,
    nash_commit,
    nash_explore_update,
    noregret_update,
    sample_subbands,
    uniform_policy,
)

POLICIES = ("uniform", "nash", "noregret", "fixed")


class ScenarioError(ValueError):
    """Config validation failure; carries every violated invariant."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("invalid scenario config:\n  " + "\n  ".join(self.messages))


@dataclass(frozen=True)
class RadarSpec:
    chirp: sig.ChirpParams
    policy: str = "uniform"
    policy_params: dict = field(default_factory=dict)
    targets: tuple[sig.Target, ...] = ()


@dataclass(frozen=True)
class LinkSpec:
    victim: int
    source: int
    inr_db: float


@dataclass(frozen=True)
class ScenarioConfig:
    radars: tuple[RadarSpec, ...]
    links: tuple[LinkSpec, ...] = ()
    episodes_per_frame: int = 1
    frames: int = 50
    seed: int = 0
    genie_detection: bool = True
    noise_power: float = 1.0
    detection_factor: float = sig.DEFAULT_DETECTION_FACTOR
    db_average: bool = False

    @property
    def n_radars(self) -> int:
        return len(self.radars)

    @property
    def n_subbands(self) -> int:
        return self.radars[0].chirp.n_subbands

    @property
    def total_episodes(self) -> int:
        return self.frames * self.episodes_per_frame


def validate_config(config: ScenarioConfig) -> list[str]:
    """Every violated invariant, as one message each."""
    errors = []
    if not config.radars:
        errors.append("radars: list must not be empty")
        return errors
    first = config.radars[0].chirp
    durations = []
    for idx, spec in enumerate(config.radars, start=1):
        ch = spec.chirp
        label = f"radars[{idx}]"
        if ch.f_c != first.f_c or ch.subband_hz != first.subband_hz \
                or ch.n_subbands != first.n_subbands:
            errors.append(f"{label}: all radars must share f_c, subband width, and subband count")
        if ch.chirps_per_frame % config.episodes_per_frame != 0:
            errors.append(
                f"{label}: chirps per frame {ch.chirps_per_frame} not divisible by "
                f"{config.episodes_per_frame} episodes")
        durations.append(ch.chirps_per_frame * ch.pri_s)
        if spec.policy not in POLICIES:
            errors.append(f"{label}: unknown policy {spec.policy!r}")
        if spec.policy == "noregret":
            kappa = spec.policy_params.get("kappa", DEFAULT_KAPPA)
            if not 0.0 <= kappa < 1.0 / ch.n_subbands:
                errors.append(f"{label}: kappa {kappa} not in [0, 1/{ch.n_subbands})")
        if spec.policy == "fixed":
            a = spec.policy_params.get("subband")
            if a is None or not 0 <= int(a) < ch.n_subbands:
                errors.append(f"{label}: fixed policy needs subband in [0, {ch.n_subbands})")
        if spec.policy == "nash":
            ex = spec.policy_params.get("explore_episodes", 10)
            if not 1 <= ex <= config.total_episodes:
                errors.append(f"{label}: explore_episodes {ex} outside the run")
        if not spec.targets:
            errors.append(f"{label}: needs at least one target (genie utility evaluation)")
        for tgt in spec.targets:
            max_delay = (2.0 / sig.C) * (
                tgt.range_m + abs(tgt.velocity_mps) * ch.chirps_per_frame * ch.pri_s)
            if max_delay >= ch.active_s:
                errors.append(f"{label}: target at {tgt.range_m} m beyond unambiguous range")
    if durations and max(durations) - min(durations) > 1e-12 * max(durations):
        errors.append("radars: frame durations K*PRI must agree across radars")
    for li, link in enumerate(config.links, start=1):
        n = config.n_radars
        if not (0 <= link.victim < n and 0 <= link.source < n) or link.victim == link.source:
            errors.append(f"links[{li}]: victim/source indices invalid")
    if config.frames < 1 or config.episodes_per_frame < 1:
        errors.append("run: frames and episodes_per_frame must be positive")
    if config.noise_power <= 0:
        errors.append("run: noise_power must be positive")
    return errors


def _pair_overlap_geometry(victim: sig.ChirpParams, source: sig.ChirpParams,
                           n_victim: int, n_source: int):
    """Candidate source chirps and time-overlap fractions per victim chirp.

    Chirp q of a radar is active on [q*PRI, q*PRI + T_a) from the common
    frame start (zero start offsets). Returns (cand, frac) arrays of shape
    (n_victim, C); frac is 0 where there is no overlap or no valid chirp.
    """
    q = np.arange(n_victim)
    start_v = q * victim.pri_s
    end_v = start_v + victim.active_s
    n_cand = int(np.ceil((victim.active_s + source.active_s) / source.pri_s)) + 2
    m0 = np.floor((start_v - source.active_s) / source.pri_s).astype(int)
    cand = m0[:, None] + np.arange(n_cand)[None, :]
    start_s = cand * source.pri_s
    overlap = np.minimum(end_v[:, None], start_s + source.active_s) \
        - np.maximum(start_v[:, None], start_s)
    frac = np.clip(overlap, 0.0, None) / victim.active_s
    valid = (cand >= 0) & (cand < n_source)
    frac = np.where(valid, frac, 0.0)
    cand = np.clip(cand, 0, max(n_source - 1, 0))
    return cand, frac


def collision_table(params_list, actions):
    """Same-subband time overlaps between every victim chirp and interferers.

    ``actions`` holds one subband sequence per radar on the common frame
    clock. Returns, per victim radar, a list over chirps of
    ``(source_radar, source_chirp, overlap_fraction)`` tuples.
    """
    acts = [np.asarray(a, dtype=int) for a in actions]
    out = []
    for i, pi in enumerate(params_list):
        rows = [[] for _ in range(acts[i].size)]
        for j, pj in enumerate(params_list):
            if j == i:
                continue
            cand, frac = _pair_overlap_geometry(pi, pj, acts[i].size, acts[j].size)
            same = acts[j][cand] == acts[i][:, None]
            hit = (frac > 0.0) & same
            for q, c in zip(*np.nonzero(hit)):
                rows[q].append((j, int(cand[q, c]), float(frac[q, c])))
        out.append(rows)
    return out


def genie_utility_table(config: ScenarioConfig) -> UtilityTable:
    """Evaluation-side utility table from the configured SNR/INR levels.

    Colliding joint actions are valued at the theoretical SINR with the
    full INR of every matching linked interferer; collision-free ones at
    the SNR. Never shown to agents in model-free runs.
    """
    n, a = config.n_radars, config.n_subbands
    snr_lin = np.array([
        sum(10.0 ** (t.snr_db / 10.0) for t in spec.targets)
        for spec in config.radars
    ])
    inr = {}
    for link in config.links:
        key = (link.victim, link.source)
        inr[key] = inr.get(key, 0.0) + 10.0 ** (link.inr_db / 10.0)
    grids = np.indices((a,) * n)
    values = np.empty((n,) + (a,) * n)
    for i in range(n):
        interference = np.zeros_like(grids[i], dtype=float)
        for j in range(n):
            if j != i and (i, j) in inr:
                interference += inr[(i, j)] * (grids[j] == grids[i])
        values[i] = 10.0 * np.log10(snr_lin[i] / (interference + 1.0))
    return UtilityTable(values)


class _Agent:
    """Binds one radar's policy state to the episode update cycle."""

    def __init__(self, spec: RadarSpec, player: int, n_players: int,
                 chirps_per_episode: int):
        self.policy = spec.policy
        self.player = player
        self.needs_exchange = spec.policy == "nash"
        a = spec.chirp.n_subbands
        params = spec.policy_params
        if spec.policy == "uniform":
            self._strategy = uniform_policy(a)
        elif spec.policy == "fixed":
            self._strategy = pure_strategy(int(params["subband"]), a)
        elif spec.policy == "noregret":
            self.state = init_noregret(
                a,
                eta_scale=params.get("c_eta", 1.0),
                gamma_scale=params.get("c_gamma", 1.0),
                kappa=params.get("kappa", DEFAULT_KAPPA),
                loss_clip_db=params.get("loss_clip_db", DEFAULT_LOSS_CLIP_DB),
                baseline_delta_db=params.get("baseline_delta_db"),
            )
        elif spec.policy == "nash":
            self.explore_episodes = int(params.get("explore_episodes", 10))
            self.chirps_per_episode = chirps_per_episode
            self.episodes_seen = 0
            self.state = init_nash_hopper(
                player, n_players, a,
                explore_chirps=self.explore_episodes * chirps_per_episode,
                floor_db=params.get("floor_db", DEFAULT_PESSIMISTIC_FLOOR_DB),
                solver_mode=params.get("solver_mode", "auto" if n_players <= 2 else "pure"),
            )
        else:
            raise ValueError(f"unknown policy {spec.policy!r}")

    @property
    def strategy(self) -> MixedStrategy:
        if self.policy in ("uniform", "fixed"):
            return self._strategy
        if self.policy == "noregret":
            return self.state.current
        return self.state.strategy

    def end_episode(self, own_stats, all_stats):
        if self.policy == "noregret":
            self.state = noregret_update(self.state, own_stats)
        elif self.policy == "nash":
            self.episodes_seen += 1
            if self.state.phase == "explore":
                self.state = nash_explore_update(self.state, all_stats)
                if self.episodes_seen == self.explore_episodes:
                    self.state = nash_commit(
                        self.state, self.episodes_seen * self.chirps_per_episode)


@dataclass
class RunMetrics:
    """Everything a run records; arrays are episode-indexed where noted."""

    strategies: np.ndarray            # (episodes, radars, subbands)
    interference_rate: np.ndarray     # (episodes, radars)
    mean_sinr_db: np.ndarray          # (episodes, radars)
    cumulative_regret_db: np.ndarray  # (episodes, radars), genie table
    external_regret_db: np.ndarray    # (radars,), full horizon
    cce_gap_db: np.ndarray            # (radars,)
    joint_distribution: JointDistribution
    aligned_actions: np.ndarray       # (steps, radars), common chirp clock
    genie_table: UtilityTable
    profiles: dict                    # radar index -> FineRangeProfile
    policies: tuple[str, ...]


def run_scenario(config: ScenarioConfig) -> RunMetrics:
    errors = validate_config(config)
    if errors:
        raise ScenarioError(errors)

    n_radars = config.n_radars
    a = config.n_subbands
    t_ep = config.episodes_per_frame
    noise = config.noise_power
    chirps = [spec.chirp for spec in config.radars]
    k_frame = [ch.chirps_per_frame for ch in chirps]
    k_ep = [k // t_ep for k in k_frame]
    s_frame = max(k_frame)  # aligned steps per frame (finest chirp clock)

    root = np.random.SeedSequence(config.seed)
    rngs = [
        {name: np.random.default_rng(child)
         for name, child in zip(("action", "noise", "intf", "target"), seq.spawn(4))}
        for seq in root.spawn(n_radars)
    ]

    agents = [_Agent(spec, i, n_radars, k_ep[i])
              for i, spec in enumerate(config.radars)]

    inr_lin = {}
    for link in config.links:
        key = (link.victim, link.source)
        inr_lin[key] = inr_lin.get(key, 0.0) + 10.0 ** (link.inr_db / 10.0)
    # Episode boundaries align in time across radars, so the per-episode
    # overlap geometry is identical every episode: precompute it per pair.
    geometry = {}
    bases = {}
    for (i, j) in inr_lin:
        geometry[(i, j)] = _pair_overlap_geometry(chirps[i], chirps[j], k_ep[i], k_ep[j])
        bases[(i, j)] = sig.interference_base(chirps[i], chirps[j])

    episodes = config.total_episodes
    strategies = np.zeros((episodes, n_radars, a))
    interference_rate = np.zeros((episodes, n_radars))
    mean_sinr_db = np.zeros((episodes, n_radars))
    aligned_frames = []
    last_frame_samples = [[] for _ in range(n_radars)]
    last_frame_hops = [[] for _ in range(n_radars)]

    ep_index = 0
    for frame in range(config.frames):
        target_phases = [
            rngs[i]["target"].uniform(0.0, 2.0 * np.pi, size=len(spec.targets))
            for i, spec in enumerate(config.radars)
        ]
        frame_actions = [np.empty(k, dtype=int) for k in k_frame]
        for ep in range(t_ep):
            acts = []
            for i in range(n_radars):
                strategy = agents[i].strategy
                strategies[ep_index, i] = strategy.probs
                acts.append(sample_subbands(strategy, rngs[i]["action"], k_ep[i]))
                frame_actions[i][ep * k_ep[i]:(ep + 1) * k_ep[i]] = acts[i]

            all_stats = []
            for i, spec in enumerate(config.radars):
                ch = chirps[i]
                k0 = ep * k_ep[i]
                hops = acts[i] * ch.subband_hz
                echo = np.zeros((ch.n_samples, k_ep[i]), dtype=complex)
                for tgt, ph in zip(spec.targets, target_phases[i]):
                    echo += sig.echo_frame(ch, tgt, hops, noise_power=noise,
                                           phase0=float(ph), k0=k0)
                intf = np.zeros_like(echo)
                collided = np.zeros(k_ep[i])
                for j in range(n_radars):
                    key = (i, j)
                    if key not in inr_lin:
                        continue
                    cand, frac = geometry[key]
                    same = acts[j][cand] == acts[i][:, None]
                    weight = (frac * same).sum(axis=1)
                    collided += weight
                    power = inr_lin[key] * noise * weight
                    phases = rngs[i]["intf"].uniform(0.0, 2.0 * np.pi, size=k_ep[i])
                    amp = np.sqrt(power) * np.exp(1j * phases)
                    intf += np.outer(bases[key], amp)
                sigma = np.sqrt(noise / 2.0)
                nz = sigma * (rngs[i]["noise"].standard_normal(echo.shape)
                              + 1j * rngs[i]["noise"].standard_normal(echo.shape))

                if config.genie_detection:
                    clean = echo + nz
                    p_clean = np.mean(np.abs(clean) ** 2, axis=0)
                    p_int = np.mean(np.abs(intf) ** 2, axis=0)
                    flags = collided > 0.0
                else:
                    composite = echo + intf + nz
                    spec2 = np.abs(np.fft.fft(composite, axis=0, norm="ortho")) ** 2
                    env = np.clip(np.max(spec2, axis=0) - np.median(spec2, axis=0),
                                  0.0, None) / ch.n_samples
                    thr = (np.sqrt(env)
                           + np.sqrt(config.detection_factor * noise)) ** 2
                    hot = np.abs(composite) ** 2 > thr
                    flags = hot.mean(axis=0) > 0.01
                    clean = np.where(hot, 0.0, composite)
                    p_clean = np.mean(np.abs(clean) ** 2, axis=0)
                    p_int = np.mean(np.abs(composite - clean) ** 2, axis=0)

                meas = sig.ChirpMeasurements(
                    subbands=acts[i], clean_power=p_clean,
                    interference_power=p_int, flagged=flags, noise_power=noise)
                all_stats.append(sig.estimate_episode_sinr(meas, a, config.db_average))

                interference_rate[ep_index, i] = float(np.mean(flags))
                mean_sinr_db[ep_index, i] = 10.0 * np.log10(
                    np.mean(p_clean / (p_int + noise)))

                if frame == config.frames - 1:
                    last_frame_samples[i].append(echo + intf + nz)
                    last_frame_hops[i].append(hops)

            for i in range(n_radars):
                agents[i].end_episode(all_stats[i], all_stats)
            ep_index += 1

        step_idx = [
            (np.arange(s_frame) * k_frame[i]) // s_frame for i in range(n_radars)
        ]
        aligned_frames.append(np.stack(
            [frame_actions[i][step_idx[i]] for i in range(n_radars)], axis=1))

    aligned = np.concatenate(aligned_frames, axis=0)  # (steps, radars)
    table = genie_utility_table(config)
    joint = empirical_joint([aligned[:, i] for i in range(n_radars)], a)

    steps_per_ep = s_frame // t_ep
    cumulative_regret = np.zeros((episodes, n_radars))
    ext_regret = np.zeros(n_radars)
    cce_gap = np.zeros(n_radars)
    for i in range(n_radars):
        u = np.moveaxis(table.values[i], i, 0)
        opp = tuple(aligned[:, j] for j in range(n_radars) if j != i)
        if opp:
            per_arm = u[(slice(None), *opp)]                    # (A, steps)
        else:
            per_arm = np.broadcast_to(u[:, None], (a, aligned.shape[0]))
        realized = table.values[i][tuple(aligned[:, j] for j in range(n_radars))]
        arm_cum = np.cumsum(per_arm, axis=1)
        real_cum = np.cumsum(realized)
        bounds = (np.arange(1, episodes + 1) * steps_per_ep) - 1
        cumulative_regret[:, i] = (arm_cum[:, bounds] - real_cum[bounds]).max(axis=0)
        ledger = RegretLedger(player=i, realized_db=realized,
                              opponent_actions=np.stack(opp, axis=1)
                              if opp else np.empty((aligned.shape[0], 0), dtype=int))
        ext_regret[i] = external_regret(ledger, table)
        cce_gap[i] = cce_deviation_gap(joint, table, i)

    profiles = {}
    for i, spec in enumerate(config.radars):
        if not spec.targets:
            continue
        ch = chirps[i]
        frame_obj = sig.ChirpFrame(
            samples=np.concatenate(last_frame_samples[i], axis=1),
            hops_hz=np.concatenate(last_frame_hops[i]))
        rfft = sig.range_fft(frame_obj)
        v0 = spec.targets[0].velocity_mps
        eps_grid = sig.default_eps_grid(ch)
        bins = np.arange(ch.n_samples // 2)
        surface = sig.sweep_coarse_bins(rfft, frame_obj.hops_hz, bins,
                                        np.array([v0]), eps_grid, ch)
        profiles[i] = sig.range_profile_at_velocity(surface, v0)

    return RunMetrics(
        strategies=strategies,
        interference_rate=interference_rate,
        mean_sinr_db=mean_sinr_db,
        cumulative_regret_db=cumulative_regret,
        external_regret_db=ext_regret,
        cce_gap_db=cce_gap,
        joint_distribution=joint,
        aligned_actions=aligned,
        genie_table=table,
        profiles=profiles,
        policies=tuple(spec.policy for spec in config.radars),
    )

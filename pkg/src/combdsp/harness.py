"""Experiment runner: typed configs, the tx->channel->rx->dsp->metrics
pipeline, sweep expansion with seeded Monte-Carlo batching, and
machine-readable result emission.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .channel import ImpairmentConfig, add_awgn, apply_cd, apply_pol_rotation, random_jones
from .errors import AdaptationError, CombDspError, ConfigurationError, SyncError
from .jointdsp import (
    DspResult,
    EqualizerState,
    apply_timing,
    cd_compensate,
    compensate_foe,
    cpe,
    joint_equalize,
    joint_foe,
    prepare_aliased_inputs,
    single_equalize,
    synchronize,
)
from .metrics import build_report, estimate_snr, gmi, spectral_efficiency
from .rng import substream
from .rxchain import ReceiverConfig, adc, coherent_downconvert, wss_demux
from .sigkit import fractional_delay, qam_constellation, rrc_taps
from .txchain import (
    ChannelPlan,
    CombModel,
    FrameMap,
    assemble_superchannel,
    build_frame,
    min_assembly_rate,
    shape_channel,
)
from .channel import wiener_phase

CSV_COLUMNS = ["beta", "constellation", "symbol_rate", "seed", "batch",
               "snr_db_x", "snr_db_y", "snr_db", "gmi_4d", "se", "mode", "flags"]
MODES = ("joint", "single")


@dataclass
class DspParams:
    num_taps: int = 25
    step_train: float = 1e-3
    step_dd: float = 1e-4
    train_epochs: int = 3
    step_train2: float = 0.0
    train_epochs2: int = 0
    freeze_after_training: bool = False
    theta_gain: float = 0.3
    cpe_average: int = 3


@dataclass
class SimParams:
    frame_len: int = 32768
    sync_pilot_len: int = 2048
    cpe_pilot_period: int = 256
    spacing_oversample: float = 8.0
    rrc_span: int = 64
    target_channel: int = 0
    timing_offset_samples: float = 0.0
    random_f0_ghz: float = 0.0
    pol_rotation: bool = True
    tx_quantize: bool = True


@dataclass
class SweepSpec:
    symbol_rate: list = field(default_factory=lambda: [24.5e9])
    beta: list = field(default_factory=lambda: [0.1])
    mode: list = field(default_factory=lambda: ["joint", "single"])
    constellation: list = field(default_factory=lambda: [64])


@dataclass
class ExperimentConfig:
    spacing: float = 25e9
    num_channels: int = 3
    polmux_mode: str = "independent"
    polmux_delay: int = 250
    gain_ripple_db: float = 0.0
    comb_tx: CombModel = field(default_factory=CombModel)
    comb_rx: CombModel = field(default_factory=CombModel)
    impairments: ImpairmentConfig = field(default_factory=ImpairmentConfig)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    dsp: DspParams = field(default_factory=DspParams)
    sim: SimParams = field(default_factory=SimParams)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    seeds: list = field(default_factory=lambda: [0])
    batches: int = 1


@dataclass(frozen=True)
class ResultRow:
    beta: float
    constellation: int
    symbol_rate: float
    seed: int
    batch: int
    snr_db_x: float
    snr_db_y: float
    snr_db: float
    gmi_4d: float
    se: float
    mode: str
    flags: str = ""

    def sort_key(self):
        return (self.beta, self.constellation, self.symbol_rate,
                self.mode, self.seed, self.batch)


_SECTION_TYPES = {
    "comb_tx": CombModel,
    "comb_rx": CombModel,
    "impairments": ImpairmentConfig,
    "receiver": ReceiverConfig,
    "dsp": DspParams,
    "sim": SimParams,
    "sweep": SweepSpec,
}


def _build_section(cls, data, path, errors):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, val in data.items():
        if key not in known:
            errors.append(f"{path}.{key}: unknown key")
            continue
        if key == "rx_comb" and isinstance(val, dict):
            val = _build_section(CombModel, val, f"{path}.rx_comb", errors)
            if val is None:
                continue
        kwargs[key] = val
    try:
        return cls(**kwargs)
    except (CombDspError, TypeError, ValueError) as exc:
        errors.append(f"{path}: {exc}")
        return None


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a typed config from nested dicts; unknown keys are hard errors."""
    errors: list = []
    top_known = {f.name for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, val in data.items():
        if key not in top_known:
            errors.append(f"{key}: unknown key")
        elif key in _SECTION_TYPES:
            if not isinstance(val, dict):
                errors.append(f"{key}: expected a mapping")
            else:
                section = _build_section(_SECTION_TYPES[key], val, key, errors)
                if section is not None:
                    kwargs[key] = section
        else:
            kwargs[key] = val
    if "receiver" in kwargs and "comb_rx" in kwargs:
        kwargs["receiver"] = replace(kwargs["receiver"], rx_comb=kwargs["comb_rx"])
    elif "comb_rx" in kwargs:
        kwargs["receiver"] = ReceiverConfig(rx_comb=kwargs["comb_rx"])
    if errors:
        raise ConfigurationError(
            "configuration rejected:\n  " + "\n  ".join(errors)
        )
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def sim_sps(config: ExperimentConfig, symbol_rate: float) -> int:
    """Integer samples per symbol giving sim_rate >= spacing_oversample * spacing."""
    return max(4, math.ceil(config.sim.spacing_oversample * config.spacing / symbol_rate))


def validate(config: ExperimentConfig) -> list:
    """All up-front checkable preconditions; returns a list of problems."""
    problems: list = []
    sw = config.sweep
    if not sw.symbol_rate or not sw.beta or not sw.mode or not sw.constellation:
        problems.append("sweep: every dimension needs at least one value")
    for m in sw.mode:
        if m not in MODES:
            problems.append(f"sweep.mode: unknown mode {m!r}")
    for order in sw.constellation:
        if order not in (16, 32, 64):
            problems.append(f"sweep.constellation: unsupported order {order}")
    for beta in sw.beta:
        if not 0.0 <= beta <= 1.0:
            problems.append(f"sweep.beta: {beta} outside [0, 1]")
    if config.num_channels % 2 == 0 or config.num_channels < 1:
        problems.append("num_channels must be odd")
    if config.num_channels < 3 and "joint" in sw.mode:
        problems.append("joint mode needs at least 3 channels")
    if config.sim.sync_pilot_len >= config.sim.frame_len:
        problems.append("frame_len cannot accommodate sync_pilot_len")
    if not config.seeds:
        problems.append("seeds must be nonempty")
    if config.batches < 1:
        problems.append("batches must be >= 1")
    if abs(config.sim.target_channel) > config.num_channels // 2 - (
            1 if "joint" in sw.mode and config.num_channels > 1 else 0):
        problems.append("target_channel (plus its neighbors) must fit the channel plan")
    for rs in sw.symbol_rate:
        for beta in sw.beta:
            plan = _plan_for(config, rs, beta, sw.constellation[0])
            rate = sim_sps(config, rs) * rs
            if rate < min_assembly_rate(plan):
                problems.append(
                    f"sim rate {rate:.3e} below assembly minimum for Rs={rs:.3e}"
                )
            if config.receiver.demux_bw <= rs:
                problems.append(
                    f"receiver.demux_bw must exceed the symbol rate {rs:.3e}"
                )
    return problems


def _plan_for(config: ExperimentConfig, symbol_rate: float, beta: float,
              order: int) -> ChannelPlan:
    return ChannelPlan(
        symbol_rate=symbol_rate,
        spacing=config.spacing,
        beta=beta,
        constellation=qam_constellation(order),
        num_channels=config.num_channels,
        polmux_delay=config.polmux_delay,
        polmux_mode=config.polmux_mode,
        gain_ripple_db=config.gain_ripple_db,
    )


def sweep_table(config: ExperimentConfig) -> list:
    """Expanded sweep grid as dicts, in emission order, without running."""
    rows = []
    for beta in config.sweep.beta:
        for order in config.sweep.constellation:
            for rs in config.sweep.symbol_rate:
                for mode in config.sweep.mode:
                    for seed in config.seeds:
                        for batch in range(config.batches):
                            rows.append(dict(beta=beta, constellation=order,
                                             symbol_rate=rs, mode=mode,
                                             seed=seed, batch=batch))
    rows.sort(key=lambda r: (r["beta"], r["constellation"], r["symbol_rate"],
                             r["mode"], r["seed"], r["batch"]))
    return rows


def run_cell(config: ExperimentConfig, beta: float, order: int, symbol_rate: float,
             mode: str, seed: int, batch: int) -> ResultRow:
    """Simulate and process one sweep cell.  Failures become flagged rows."""
    try:
        report = _simulate_cell(config, beta, order, symbol_rate, mode, seed, batch)
        return ResultRow(beta=beta, constellation=order, symbol_rate=symbol_rate,
                         seed=seed, batch=batch, snr_db_x=report.snr_db_x,
                         snr_db_y=report.snr_db_y, snr_db=report.snr_db,
                         gmi_4d=report.gmi_bits_per_4d, se=report.se_bits_per_s_hz,
                         mode=mode, flags="")
    except SyncError:
        flag = "sync-failed"
    except AdaptationError:
        flag = "diverged"
    except CombDspError as exc:
        flag = f"error:{type(exc).__name__}"
    nan = float("nan")
    return ResultRow(beta=beta, constellation=order, symbol_rate=symbol_rate,
                     seed=seed, batch=batch, snr_db_x=nan, snr_db_y=nan,
                     snr_db=nan, gmi_4d=nan, se=nan, mode=mode, flags=flag)


def simulate_frontend(config: ExperimentConfig, beta: float, order: int,
                      symbol_rate: float, seed: int, batch: int):
    """Everything up to the three 2-SPS receiver streams.

    Random draws are labeled by (seed, batch, stage) only, never by sweep
    coordinates or mode, so joint/single comparisons are exactly paired.
    """
    plan = _plan_for(config, symbol_rate, beta, order)
    fmap = FrameMap(frame_len=config.sim.frame_len,
                    sync_pilot_len=config.sim.sync_pilot_len,
                    cpe_pilot_period=config.sim.cpe_pilot_period)
    sps = sim_sps(config, symbol_rate)
    fs = sps * symbol_rate
    records = build_frame(plan, fmap, seed=_mix(seed, batch))
    pulse = rrc_taps(beta, sps, config.sim.rrc_span)
    waves = []
    for pos, rec in enumerate(records):
        sig = shape_channel(rec.symbols, pulse, sps, symbol_rate=symbol_rate)
        if config.sim.tx_quantize and not math.isinf(config.impairments.enob):
            from .channel import quantize
            sig = quantize(sig, config.impairments.enob, config.impairments.clip_sigma)
        if config.sim.pol_rotation:
            u = random_jones(substream(_mix(seed, batch), "polrot", pos))
            sig = apply_pol_rotation(sig, u)
        waves.append(sig)
    comb_tx = config.comb_tx
    if config.sim.random_f0_ghz > 0:
        draw = substream(_mix(seed, batch), "f0").uniform(-config.sim.random_f0_ghz,
                                                          config.sim.random_f0_ghz)
        comb_tx = replace(comb_tx, f0=draw * 1e9)
    comb_tx = replace(comb_tx, num_lines=max(comb_tx.num_lines, plan.num_channels))
    comp = assemble_superchannel(waves, plan, comb_tx, sim_rate=fs,
                                 seed=_mix(seed, batch))
    if config.impairments.fiber_len_km > 0:
        comp = apply_cd(comp, config.impairments.fiber_len_km,
                        config.impairments.dispersion_ps_nm_km)
    if not math.isinf(config.impairments.snr_db):
        comp = add_awgn(comp, config.impairments.snr_db, symbol_rate,
                        substream(_mix(seed, batch), "awgn"),
                        ref_power=comp.mean_power() / plan.num_channels)
    if config.sim.timing_offset_samples:
        comp = fractional_delay(comp, config.sim.timing_offset_samples)
    rx_cfg = replace(config.receiver,
                     rx_comb=replace(config.comb_rx,
                                     num_lines=max(config.comb_rx.num_lines,
                                                   plan.num_channels)))
    lo_phase = wiener_phase(rx_cfg.rx_comb.linewidth, len(comp), fs,
                            substream(_mix(seed, batch), "rx-lo"))
    target = config.sim.target_channel
    n_side = plan.num_channels // 2
    indices = [i for i in (target - 1, target, target + 1) if abs(i) <= n_side]
    streams = []
    for i in indices:
        band = wss_demux(comp, i, rx_cfg)
        down = coherent_downconvert(band, i, rx_cfg, lo_phase=lo_phase)
        streams.append(adc(down, symbol_rate, rx_cfg))
    triple_records = [records[i + n_side] for i in indices]
    return streams, triple_records, plan, fmap


def run_receiver_dsp(streams: list, records: list, plan: ChannelPlan, fmap: FrameMap,
                     dsp: DspParams, mode: str,
                     fiber_len_km: float = 0.0,
                     dispersion_ps_nm_km: float = 17.0) -> DspResult:
    """Shared sync, per-channel CD compensation, joint FOE, equalization
    and carrier phase tracking for one channel triple (or a lone channel
    when the plan has no neighbors)."""
    center = streams[len(streams) // 2]
    center_record = records[len(streams) // 2]
    timing = synchronize(center, center_record.sync_pilots, fmap, plan.beta)
    aligned = [apply_timing(s, timing) for s in streams]
    if fiber_len_km > 0:
        aligned = [cd_compensate(s, fiber_len_km, dispersion_ps_nm_km)
                   for s in aligned]
    if len(streams) == 3:
        indices = np.array([-1.0, 0.0, 1.0])
    elif len(streams) == 1:
        indices = np.array([0.0])
        if mode == "joint":
            raise ConfigurationError("joint mode needs a full channel triple")
    else:
        raise ConfigurationError("expected 1 or 3 receiver streams")
    s_len = fmap.sync_pilot_len
    foe_refs = [r.symbols[:, :s_len] for r in records]
    foe = joint_foe(aligned, indices, foe_refs, fmap, plan.symbol_rate,
                    beta=plan.beta)
    compensated, delta_applied = compensate_foe(aligned, indices, foe, fmap,
                                                plan.symbol_rate)
    pilots = {"sync": center_record.sync_pilots, "cpe": center_record.cpe_pilots}
    state_kw = dict(step_train=dsp.step_train, step_dd=dsp.step_dd,
                    train_epochs=dsp.train_epochs,
                    step_train2=dsp.step_train2, train_epochs2=dsp.train_epochs2,
                    freeze_after_training=dsp.freeze_after_training,
                    theta_gain=dsp.theta_gain)
    if mode == "joint":
        six = prepare_aliased_inputs(compensated, plan.spacing, plan.symbol_rate)
        state = EqualizerState.initial("joint6x2", dsp.num_taps, **state_kw)
        eq = joint_equalize(six, pilots, state, fmap, plan.constellation)
    elif mode == "single":
        two = compensated[len(compensated) // 2].pol_stack()
        state = EqualizerState.initial("single2x2", dsp.num_taps, **state_kw)
        eq = single_equalize(two, pilots, state, fmap, plan.constellation)
    else:
        raise ConfigurationError(f"unknown processing mode {mode!r}")
    corrected, phase_trace, slips = cpe(eq.symbols, center_record.cpe_pilots,
                                        fmap, num_average=dsp.cpe_average)
    payload = corrected[:, fmap.payload_indices]
    return DspResult(
        symbols_x=payload[0], symbols_y=payload[1],
        foe_estimate=foe.f0_hz, delta_f_estimate=foe.delta_f_hz,
        timing_offset=timing,
        diagnostics={
            "taps": eq.taps, "error_curve": eq.error_curve,
            "train_error": eq.train_error, "theta_trace": eq.theta_trace,
            "cpe_phase": phase_trace, "cpe_warnings": slips,
            "delta_f_applied": delta_applied, "raw_offsets": foe.raw_offsets_hz,
            "full_symbols": corrected,
        },
    )


def _simulate_cell(config, beta, order, symbol_rate, mode, seed, batch):
    streams, records, plan, fmap = simulate_frontend(
        config, beta, order, symbol_rate, seed, batch)
    center_record = records[len(streams) // 2]
    result = run_receiver_dsp(streams, records, plan, fmap, config.dsp, mode,
                              fiber_len_km=config.impairments.fiber_len_km,
                              dispersion_ps_nm_km=config.impairments.dispersion_ps_nm_km)
    rx_payload = np.stack([result.symbols_x, result.symbols_y])
    snr = estimate_snr(rx_payload, center_record.payload)
    gmi_est = gmi(rx_payload, center_record.payload_bits, plan.constellation)
    se = spectral_efficiency(gmi_est.bits_per_4d, symbol_rate, plan.spacing,
                             fmap.overhead)
    return build_report(snr, gmi_est, se, rx_payload.shape[1])


def _mix(seed: int, batch: int) -> int:
    return (int(seed) << 16) ^ (int(batch) * 0x9E3779B1 & 0xFFFF)


def _cell_worker(args):
    config_dict, beta, order, rs, mode, seed, batch = args
    config = config_from_dict(config_dict)
    return run_cell(config, beta, order, rs, mode, seed, batch)


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def run_experiment(config: ExperimentConfig, parallelism: int = 1) -> list:
    """Execute every sweep cell; deterministic given (config, seeds).

    Rows come back sorted by sweep keys regardless of execution order or
    parallelism degree.  Flagged rows record per-cell failures; nothing
    is silently dropped.
    """
    problems = validate(config)
    if problems:
        raise ConfigurationError("configuration rejected:\n  " + "\n  ".join(problems))
    cells = sweep_table(config)
    if parallelism > 1:
        cfg_dict = config_to_dict(config)
        args = [(cfg_dict, c["beta"], c["constellation"], c["symbol_rate"],
                 c["mode"], c["seed"], c["batch"]) for c in cells]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(_cell_worker, args))
    else:
        rows = [run_cell(config, c["beta"], c["constellation"], c["symbol_rate"],
                         c["mode"], c["seed"], c["batch"]) for c in cells]
    rows.sort(key=ResultRow.sort_key)
    return rows


def emit_results(rows: list, fmt: str, path: str) -> None:
    """Write rows as CSV (fixed column order) or JSON lines."""
    if fmt not in ("csv", "json-lines"):
        raise ConfigurationError(f"unknown output format {fmt!r}")
    def fmt_val(v):
        if isinstance(v, float):
            return f"{v:.9g}"
        return v
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(CSV_COLUMNS)
                for row in rows:
                    d = asdict(row)
                    writer.writerow([fmt_val(d[c]) for c in CSV_COLUMNS])
        else:
            with open(path, "w") as fh:
                for row in rows:
                    d = asdict(row)
                    fh.write(json.dumps({c: d[c] for c in CSV_COLUMNS}) + "\n")
    except OSError as exc:
        raise ConfigurationError(f"cannot write results to {path}: {exc}") from exc


def load_results(path: str) -> list:
    """Parse a json-lines or CSV result file back into rows."""
    rows = []
    with open(path) as fh:
        first = fh.read(1)
        fh.seek(0)
        if first == "{":
            for line in fh:
                if line.strip():
                    rows.append(ResultRow(**json.loads(line)))
        else:
            for rec in csv.DictReader(fh):
                rows.append(ResultRow(
                    beta=float(rec["beta"]), constellation=int(rec["constellation"]),
                    symbol_rate=float(rec["symbol_rate"]), seed=int(rec["seed"]),
                    batch=int(rec["batch"]), snr_db_x=float(rec["snr_db_x"]),
                    snr_db_y=float(rec["snr_db_y"]), snr_db=float(rec["snr_db"]),
                    gmi_4d=float(rec["gmi_4d"]), se=float(rec["se"]),
                    mode=rec["mode"], flags=rec["flags"]))
    return rows

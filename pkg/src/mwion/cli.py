"""
Command-line runner: ``mwion <scenario> --config <ini> --seed <u64> --out <dir>``.

Physics parameters come from the INI file; flags only select the scenario,
seed and output directory. Exit status is 0 on success, 1 on a physics or
fit failure and 2 on a configuration or I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import fieldmap as fm
from . import fluor as fl
from . import gate as gt
from . import io
from . import levels as lv
from .errors import ConfigError, DataFormatError, MwionError

TWO_PI = 2 * math.pi
MODE_RANGE = (4e6, 10e6)  # radial mode frequencies, Hz


@dataclass(frozen=True)
class Param:
    kind: str  # float, int, str, bool, path
    default: object = None  # None means required
    lo: float | None = None
    hi: float | None = None
    choices: tuple = ()


def _req(kind, lo=None, hi=None, choices=()):
    return Param(kind, None, lo, hi, choices)


def _opt(kind, default, lo=None, hi=None, choices=()):
    return Param(kind, default, lo, hi, choices)


ATOM = {"atom": {"constants": _opt("path", "")}}
MODE = {
    "frequency_hz": _req("float", *MODE_RANGE),
    "n_ions": _opt("int", 2, 1, 2),
    "fock_cutoff": _opt("int", dyn.DEFAULT_CUTOFF, 5, 200),
}

SCHEMAS: dict[str, dict[str, dict[str, Param]]] = {
    "levels-curve": {
        **ATOM,
        "levels": {
            "delta_b_min_t": _req("float", -5e-3, 0.0),
            "delta_b_max_t": _req("float", 0.0, 5e-3),
            "points": _opt("int", 201, 3, 100001),
            "table_field_max_t": _opt("float", 30e-3, 1e-6, 1.0),
            "table_points": _opt("int", 61, 2, 100001),
        },
    },
    "rabi-flop": {
        **ATOM,
        "rabi": {
            "drive_amplitude_t": _req("float", 1e-7, 1e-1),
            "duration_max_s": _req("float", 1e-10, 1e-3),
            "detuning_hz": _opt("float", 0.0, -1e9, 1e9),
            "points": _opt("int", 101, 2, 100001),
            "shots": _opt("int", 0, 0, 10**7),
        },
    },
    "zeeman-map-fit": {
        **ATOM,
        "fieldmap": {
            "transition": _opt("str", "mapping", choices=("mapping", "qubit")),
            "drive_offset_hz": _req("float", -100e6, 100e6),
            "input": _opt("path", ""),
            "bprime_t_per_m": _opt("float", 35.3, 0.0, 1e4),
            "alpha_deg": _opt("float", 26.6, -180.0, 180.0),
            "null_x_m": _opt("float", 0.0, -1e-4, 1e-4),
            "null_z_m": _opt("float", 0.0, -1e-4, 1e-4),
            "grid_half_width_m": _opt("float", 2e-6, 1e-8, 1e-4),
            "grid_points": _opt("int", 7, 3, 101),
            "sigma_hz": _opt("float", 2e3, 1e-6, 1e9),
            "guess_bprime_t_per_m": _opt("float", 30.0, 1e-3, 1e4),
            "guess_alpha_deg": _opt("float", 20.0, -180.0, 180.0),
            "guess_null_x_m": _opt("float", 0.0, -1e-4, 1e-4),
            "guess_null_z_m": _opt("float", 0.0, -1e-4, 1e-4),
        },
    },
    "sideband-scan": {
        **ATOM,
        "mode": MODE,
        "scan": {
            "nbar": _req("float", 0.0, 20.0),
            "sideband_rate_hz": _req("float", 1.0, 1e6),
            "pulse_duration_s": _req("float", 1e-7, 1e-1),
            "offset_span_hz": _opt("float", 8e3, 1.0, 1e7),
            "points": _opt("int", 33, 3, 10001),
            "shots": _opt("int", 300, 1, 10**7),
            "fit": _opt("bool", True),
        },
    },
    "cool": {
        **ATOM,
        "mode": MODE,
        "cooling": {
            "initial_nbar": _req("float", 0.0, 20.0),
            "cycles": _req("int", 0, 1000),
            "pulse_duration_s": _req("float", 1e-7, 1e-1),
            "sideband_rate_hz": _req("float", 1.0, 1e6),
            "repump_efficiency": _req("float", 0.0, 1.0),
            "recoil_quanta": _opt("float", -1.0, -1.0, 10.0),
            "heating_rate_per_s": _opt("float", 0.0, 0.0, 1e6),
            "cycle_duration_s": _opt("float", 0.0, 0.0, 1.0),
        },
    },
    "gate": {
        **ATOM,
        "gate": {
            "mode_frequency_hz": _req("float", *MODE_RANGE),
            "detuning_hz": _req("float", 1.0, 1e6),
            "segments": _opt("int", 2, 1, 2),
            "segment_duration_s": _opt("float", 0.0, 0.0, 1.0),
            "sideband_rate_hz": _opt("float", 0.0, 0.0, 1e6),
            "initial_nbar": _opt("float", 0.0, 0.0, 20.0),
            "literal_segment_duration_s": _opt("float", 200e-6, 0.0, 1.0),
        },
        "noise": {
            "jitter_hz": _opt("float", 0.0, 0.0, 1e5),
            "residual_field_t": _opt("float", 0.0, 0.0, 1e-2),
            "heating_rate_per_s": _opt("float", 0.0, 0.0, 1e6),
            "shots": _opt("int", 1000, 1, 10**6),
            "ablation": _opt("bool", True),
        },
    },
    "parity-scan": {
        **ATOM,
        "state": {
            "population_uu": _req("float", 0.0, 1.0),
            "population_dd": _req("float", 0.0, 1.0),
            "coherence_abs": _req("float", 0.0, 0.5),
        },
        "detection": {
            "mean_dark": _opt("float", fl.DEFAULT_DARK, 1e-6, 1e3),
            "mean_one_bright": _opt("float", fl.DEFAULT_BRIGHT, 1e-6, 1e3),
            "shots": _opt("int", 300, 1, 10**7),
            "phases": _opt("int", 16, 8, 10001),
            "scan_histograms": _opt("path", ""),
            "direct_histogram": _opt("path", ""),
        },
        "reference": {
            "calibrate": _opt("bool", True),
            "thetas": _opt("int", 12, 3, 1001),
            "shots": _opt("int", 300, 1, 10**7),
        },
    },
}


def _convert(raw: str, p: Param, base: Path):
    if p.kind == "float":
        v = float(raw)
        if not math.isfinite(v):
            raise ValueError("must be finite")
    elif p.kind == "int":
        v = int(raw)
    elif p.kind == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
            raise ValueError("must be a boolean")
        v = low in ("true", "yes", "1", "on")
    elif p.kind == "path":
        v = raw.strip()
        if v:
            path = (base / v) if not Path(v).is_absolute() else Path(v)
            if not path.is_file():
                raise ValueError(f"file not found: {path}")
            v = str(path)
    else:
        v = raw.strip()
    if p.lo is not None and v < p.lo:
        raise ValueError(f"{v!r} below minimum {p.lo!r}")
    if p.hi is not None and v > p.hi:
        raise ValueError(f"{v!r} above maximum {p.hi!r}")
    if p.choices and v not in p.choices:
        raise ValueError(f"{v!r} not one of {', '.join(p.choices)}")
    return v


def load_config(path, scenario: str) -> dict[str, dict[str, object]]:
    """Parse and validate an INI config; every problem is reported at once."""
    if scenario not in SCHEMAS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCHEMAS)}")
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    schema = SCHEMAS[scenario]
    problems = []
    missing = []
    out: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in schema:
            problems.append(f"unknown section [{section}]")
            continue
        for key in parser[section]:
            if key not in schema[section]:
                problems.append(f"unknown key {section}.{key}")
    for section, params in schema.items():
        out[section] = {}
        for key, p in params.items():
            if parser.has_option(section, key):
                try:
                    out[section][key] = _convert(parser.get(section, key), p, path.parent)
                except ValueError as exc:
                    problems.append(f"invalid {section}.{key}: {exc}")
            elif p.default is None:
                missing.append(f"{section}.{key}")
            else:
                out[section][key] = p.default
    if missing:
        problems.insert(0, "missing required keys: " + ", ".join(missing))
    if problems:
        raise ConfigError("; ".join(problems))
    return out


# --- scenarios ---------------------------------------------------------------

def _atom(cfg):
    return lv.load_atom(cfg["atom"]["constants"] or None)


def _mode(cfg, atom):
    m = cfg["mode"]
    vec = (1 / math.sqrt(2), -1 / math.sqrt(2)) if m["n_ions"] == 2 else (1.0,)
    return dyn.MotionalMode(m["frequency_hz"], atom.mass, m["n_ions"], vec, m["fock_cutoff"])


def run_levels_curve(cfg, seed, out: Path):
    atom = _atom(cfg)
    c = cfg["levels"]
    B0, f0 = lv.field_independent_point(atom, lv.QUBIT)
    dB = np.linspace(c["delta_b_min_t"], c["delta_b_max_t"], c["points"])
    freqs = np.array([lv.transition_frequency(atom, lv.QUBIT, B0 + d) for d in dB])
    io.write_csv(out / "qubit_curve.csv", ("delta_b_t", "frequency_hz", "offset_hz"),
                 zip(dB, freqs, freqs - f0))
    rows = []
    for B in np.linspace(0.0, c["table_field_max_t"], c["table_points"]):
        for level in lv.breit_rabi_levels(atom, float(B)):
            rows.append((B, f"|{level.f_label},{level.m_f}>", level.energy))
    io.write_csv(out / "levels.csv", ("B_t", "label", "energy_hz"), rows)
    curvature = lv.frequency_slope(atom, lv.QUBIT, B0 + 1e-4) - lv.frequency_slope(atom, lv.QUBIT, B0 - 1e-4)
    k = int(np.argmin(freqs) if curvature > 0 else np.argmax(freqs))
    io.write_json(out / "summary.json", {
        "field_independent_b0_t": B0,
        "qubit_frequency_f0_hz": f0,
        "extremum": "minimum" if curvature > 0 else "maximum",
        "extremum_delta_b_t": dB[k],
        "grid_step_t": dB[1] - dB[0],
        "curvature_hz_per_t2": curvature / 2e-4,
    })


def run_rabi_flop(cfg, seed, out: Path):
    atom = _atom(cfg)
    c = cfg["rabi"]
    B0, f0 = lv.field_independent_point(atom, lv.QUBIT)
    me = lv.dipole_matrix_element(atom, lv.QUBIT, B0)
    pi_time = lv.pi_time_from_field(me, c["drive_amplitude_t"])
    rate = math.pi / pi_time
    times = np.linspace(0.0, c["duration_max_s"], c["points"])
    p_up = np.array([dyn.carrier_rabi(rate, TWO_PI * c["detuning_hz"], float(t))[1] for t in times])
    if c["shots"]:
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        signal = rng.binomial(c["shots"], np.clip(p_up, 0, 1)) / c["shots"]
        sigma = np.sqrt(np.maximum(signal * (1 - signal), 1 / c["shots"]) / c["shots"])
    else:
        signal, sigma = p_up, np.zeros_like(p_up)
    io.write_csv(out / "rabi.csv", ("time_s", "p_up", "sigma"), zip(times, signal, sigma))
    io.write_json(out / "summary.json", {
        "matrix_element": me,
        "pi_time_s": pi_time,
        "rabi_rate_rad_s": rate,
        "field_independent_b0_t": B0,
    })


def run_zeeman_map_fit(cfg, seed, out: Path):
    atom = _atom(cfg)
    c = cfg["fieldmap"]
    frame = fm.StaticFieldFrame()
    B0, f0 = lv.field_independent_point(atom, lv.QUBIT)
    frame = fm.StaticFieldFrame(frame.quantization_direction, B0)
    t = lv.MAPPING if c["transition"] == "mapping" else lv.QUBIT
    drive = f0 + c["drive_offset_hz"]
    if c["input"]:
        data = io.read_shift_map(c["input"])
        truth = None
    else:
        truth = fm.QuadrupoleField(c["bprime_t_per_m"], math.radians(c["alpha_deg"]), drive,
                                   (c["null_x_m"], c["null_z_m"]))
        g = np.linspace(-c["grid_half_width_m"], c["grid_half_width_m"], c["grid_points"])
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        data = fm.synthetic_shift_map(truth, atom, frame, t, [(x, z) for x in g for z in g], c["sigma_hz"], rng)
    io.write_shift_map(out / "shift_map.csv", data)
    guess = fm.QuadrupoleField(c["guess_bprime_t_per_m"], math.radians(c["guess_alpha_deg"]), drive,
                               (c["guess_null_x_m"], c["guess_null_z_m"]))
    fit = fm.fit_quadrupole(data, atom, frame, t, drive, guess)
    report = fit.report()
    report["alpha_deg"] = math.degrees(fit.field.angle_alpha)
    report["iterations"] = fit.iterations
    report["n_points"] = len(data)
    if truth is not None:
        report["truth"] = {"bprime_t_per_m": truth.gradient_Bprime, "alpha_rad": truth.angle_alpha,
                           "null_x_m": truth.null_position[0], "null_z_m": truth.null_position[1]}
    io.write_json(out / "fit.json", report)


def run_sideband_scan(cfg, seed, out: Path):
    atom = _atom(cfg)
    mode = _mode(cfg, atom)
    c = cfg["scan"]
    rate = TWO_PI * c["sideband_rate_hz"]
    offsets = np.linspace(-c["offset_span_hz"], c["offset_span_hz"], c["points"])
    motion = dyn.ThermalState.thermal(c["nbar"])
    red_seq, blue_seq = np.random.SeedSequence(seed).spawn(2)
    red = dyn.sample_scan(mode, "up", motion, rate, c["pulse_duration_s"], offsets, c["shots"],
                          np.random.default_rng(red_seq))
    blue = dyn.sample_scan(mode, "down", motion, rate, c["pulse_duration_s"], offsets, c["shots"],
                           np.random.default_rng(blue_seq))
    for name, scan in (("red", red), ("blue", blue)):
        io.write_csv(out / f"{name}.csv", io.SCAN_HEADER, zip(scan.offsets, scan.signal, scan.sigma))
    report = {"nbar_true": c["nbar"], "sideband_rate_true_rad_s": rate, "shots": c["shots"]}
    if c["fit"]:
        fit = dyn.fit_nbar(red, blue, mode, c["pulse_duration_s"], rate, nbar_guess=1.0)
        report.update({
            "nbar": fit.nbar, "nbar_err": fit.nbar_err,
            "sideband_rate_rad_s": fit.sideband_rate, "sideband_rate_err": fit.sideband_rate_err,
            "chi2_reduced": fit.chi2_reduced,
        })
    io.write_json(out / "fit.json", report)


def run_cool(cfg, seed, out: Path):
    atom = _atom(cfg)
    mode = _mode(cfg, atom)
    c = cfg["cooling"]
    recoil = c["recoil_quanta"]
    if recoil < 0:
        recoil = dyn.recoil_quanta_per_cycle(ion_mass=atom.mass, mode_frequency=mode.frequency,
                                             participation=abs(mode.mode_vector[0]))
    res = dyn.sideband_cool(
        mode,
        dyn.ThermalState.thermal(c["initial_nbar"], max(mode.fock_cutoff, dyn.ESCALATED_CUTOFF)),
        c["cycles"],
        c["pulse_duration_s"],
        TWO_PI * c["sideband_rate_hz"],
        c["repump_efficiency"],
        recoil,
        c["heating_rate_per_s"],
        c["cycle_duration_s"] or None,
    )
    io.write_csv(out / "cooling.csv", ("cycle", "nbar"), enumerate(res.nbar_history))
    io.write_csv(out / "distribution.csv", ("n", "probability"), enumerate(res.distribution.probs))
    io.write_json(out / "summary.json", {
        "final_nbar": res.nbar_history[-1],
        "recoil_quanta_per_cycle": recoil,
        "spin_populations": res.spin_populations,
    })


def _gate_schedule(c, delta, seg_duration):
    if c["segments"] == 2:
        return gt.GateSchedule.two_segment(delta, seg_duration, 0.0, c["mode_frequency_hz"])
    return gt.GateSchedule.single_segment(delta, 2 * seg_duration if seg_duration else None,
                                          0.0, c["mode_frequency_hz"])


def run_gate(cfg, seed, out: Path):
    atom = _atom(cfg)
    c, nz = cfg["gate"], cfg["noise"]
    delta = c["detuning_hz"]
    sched = _gate_schedule(c, delta, c["segment_duration_s"] or None)
    rate = TWO_PI * c["sideband_rate_hz"] if c["sideband_rate_hz"] else gt.calibrate_rate(sched)
    sched = sched.with_rate(rate)
    motion = dyn.ThermalState.thermal(c["initial_nbar"])
    rho_ideal = gt.ms_propagate(sched, gt.RHO_DOWN_DOWN, motion)
    report = {
        "schedule": {
            "segments": len(sched.segments),
            "segment_duration_s": sched.segments[0].duration,
            "detuning_hz": delta,
            "sideband_rate_rad_s": rate,
            "closure_residual": [abs(r) for r in sched.closure_residual()],
            "geometric_phase_rad": gt.geometric_phase(sched),
        },
        "initial_nbar": c["initial_nbar"],
        "ideal_fidelity": gt.state_fidelity(rho_ideal),
        "motion_restoration_trace_distance": gt.motion_restoration(sched, motion),
    }
    if c["literal_segment_duration_s"]:
        lit = _gate_schedule(c, delta, c["literal_segment_duration_s"])
        lit = lit.with_rate(gt.calibrate_rate(lit))
        f_lit = gt.state_fidelity(gt.ms_propagate(lit, gt.RHO_DOWN_DOWN, motion))
        report["literal_duration"] = {
            "segment_duration_s": c["literal_segment_duration_s"],
            "fidelity": f_lit,
            "difference_from_closure": report["ideal_fidelity"] - f_lit,
        }
    sources = {
        "jitter": dict(motional_freq_jitter_rms=nz["jitter_hz"]),
        "residual_field": dict(residual_field_amplitude=nz["residual_field_t"]),
        "heating": dict(heating_rate=nz["heating_rate_per_s"]),
    }
    active = {k: v for k, v in sources.items() if next(iter(v.values())) > 0}
    tensors = ()
    if nz["residual_field_t"] > 0:
        B0, f0 = lv.field_independent_point(atom, lv.QUBIT)
        frame = fm.StaticFieldFrame(fm.StaticFieldFrame().quantization_direction, B0)
        tone = c["mode_frequency_hz"] + delta
        tensors = tuple(fm.shift_tensor(atom, frame, lv.QUBIT, f0 + s * tone) for s in (1, -1))
    seed_seq = np.random.SeedSequence(seed)
    noise_seed = int(seed_seq.generate_state(1, np.uint64)[0])

    def noisy(kwargs):
        noise = gt.NoiseModel(**kwargs, shots=nz["shots"], rng_seed=noise_seed)
        r = gt.propagate_noisy(sched, gt.RHO_DOWN_DOWN, motion, noise, tensors)
        return {"fidelity": r.fidelity, "fidelity_stderr": r.fidelity_stderr}

    if active:
        combined = {k: v for src in active.values() for k, v in src.items()}
        report["noisy"] = noisy(combined)
        report["noisy"]["shots"] = nz["shots"]
        if nz["ablation"] and len(active) > 1:
            report["ablation"] = {name: noisy(kw) for name, kw in active.items()}
    else:
        report["noisy"] = {"fidelity": report["ideal_fidelity"], "fidelity_stderr": 0.0, "shots": 0}
    times = np.linspace(0.0, sched.total_duration, 401)
    traj = gt.loop_trajectory(sched, times)
    io.write_csv(out / "phase_space.csv", ("time_s", "re_alpha", "im_alpha"), zip(times, traj.real, traj.imag))
    io.write_json(out / "report.json", report)


def _constructed_rho(c):
    uu, dd = c["population_uu"], c["population_dd"]
    if uu + dd > 1 + 1e-12:
        raise ConfigError("state.population_uu + state.population_dd exceeds 1")
    if c["coherence_abs"] > math.sqrt(uu * dd) + 1e-12:
        raise ConfigError("state.coherence_abs exceeds sqrt(population_uu * population_dd)")
    rest = (1 - uu - dd) / 2
    rho = np.diag([uu, rest, rest, dd]).astype(complex)
    # same coherence phase as the target state
    rho[0, 3] = -1j * c["coherence_abs"]
    rho[3, 0] = 1j * c["coherence_abs"]
    return rho


def run_parity_scan(cfg, seed, out: Path):
    det, ref, st = cfg["detection"], cfg["reference"], cfg["state"]
    truth_mix = fl.PoissonMixture(det["mean_dark"], det["mean_one_bright"])
    ref_seq, scan_seq = np.random.SeedSequence(seed).spawn(2)
    report = {}
    mixture, rf = truth_mix, None
    if ref["calibrate"]:
        thetas = np.linspace(0.0, math.pi, ref["thetas"])
        hists = [fl.simulate_detection(fl.reference_class_probs(th), truth_mix, ref["shots"],
                                       np.random.default_rng(s), phase=th)
                 for th, s in zip(thetas, ref_seq.spawn(len(thetas)))]
        io.write_histograms(out / "reference_histograms.csv", hists)
        rf = fl.fit_reference(hists, thetas)
        mixture = rf.mixture
        report["reference_fit"] = {
            "mean_dark": mixture.mean_dark,
            "mean_one_bright": mixture.mean_one_bright,
            "class_weights": mixture.class_weights,
            "chi2_reduced": rf.chi2_reduced,
            "dof": rf.dof,
        }
    if bool(det["scan_histograms"]) != bool(det["direct_histogram"]):
        raise ConfigError("detection.scan_histograms and detection.direct_histogram must be given together")
    if det["scan_histograms"]:
        scan = io.read_histograms(det["scan_histograms"])
        direct = io.read_histograms(det["direct_histogram"])
        if len(direct) != 1:
            raise DataFormatError("direct histogram file must contain exactly one phase", det["direct_histogram"], 2)
        direct = direct[0]
    else:
        rho = _constructed_rho(st)
        phases = np.linspace(0.0, math.pi, det["phases"], endpoint=False)
        seqs = scan_seq.spawn(len(phases) + 1)
        scan = [fl.simulate_detection(fl.rotated_populations(rho, p), truth_mix, det["shots"],
                                      np.random.default_rng(s), phase=p)
                for p, s in zip(phases, seqs)]
        direct = fl.simulate_detection(fl.bright_populations(rho), truth_mix, det["shots"],
                                       np.random.default_rng(seqs[-1]))
        report["true_fidelity"] = gt.state_fidelity(rho)
    io.write_histograms(out / "scan_histograms.csv", scan)
    res, decs, d_direct = fl.analyze_parity_scan(scan, direct, mixture, rf)
    io.write_csv(out / "parity.csv", io.PARITY_HEADER, zip(res.phases, res.parity, res.parity_sigma))
    io.write_csv(out / "populations.csv", ("phi_rad", "p0", "p1", "p2", "sigma0", "sigma1", "sigma2"),
                 (np.concatenate([[phi], p, s]) for phi, p, s in
                  zip(res.phases, res.populations, res.population_sigma)))
    report.update(res.report())
    report["direct_populations"] = d_direct.populations
    report["chi2_reduced_histograms"] = [d.chi2_reduced for d in decs]
    io.write_json(out / "report.json", report)


SCENARIOS = {
    "levels-curve": run_levels_curve,
    "rabi-flop": run_rabi_flop,
    "zeeman-map-fit": run_zeeman_map_fit,
    "sideband-scan": run_sideband_scan,
    "cool": run_cool,
    "gate": run_gate,
    "parity-scan": run_parity_scan,
}


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mwion", description=__doc__.strip().splitlines()[0])
    p.add_argument("scenario", help=", ".join(SCENARIOS))
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, type=Path)
    return p


def run_experiment(scenario: str, config, seed: int, out) -> int:
    """Run one scenario and return the process exit status."""
    try:
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
        cfg = load_config(config, scenario)
        out = Path(out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from exc
        SCENARIOS[scenario](cfg, seed, out)
    except (ConfigError, DataFormatError) as exc:
        print(f"mwion: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mwion: I/O error: {exc}", file=sys.stderr)
        return 2
    except (MwionError, ValueError) as exc:
        print(f"mwion: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run_experiment(args.scenario, args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())

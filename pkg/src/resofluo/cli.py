"""Command-line entry point: ``resofluo <scenario> [--config FILE] [overrides]``.

Overrides mirror config keys, e.g. ``--physics.gamma 1.2`` or
``--kmc.p_res [1,2]``; values are parsed as JSON when possible.
Exit codes: 0 success, 2 configuration error, 3 numerical or convergence
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import GridMismatchError, InvalidParameterError, ResofluoError, __version__
from . import io as rio
from .config import SCENARIOS, Config, ConfigError, parse_config, parse_value
from .fitting import (
    DataSeries,
    fit_exponential_plateau,
    fit_g2,
    fit_ple_voigt,
    g2_model,
    ple_lorentzian_fwhm,
    plateau_model,
)
from .fluomap import MapConfig, envelope, fluorescence_map, ple_spectrum
from .spectral import Grid1D, estimate_fwhm, ghz_to_angular, voigt_density
from .tls import TlsParams, g2_with_background

log = logging.getLogger("resofluo")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConvergenceError(ResofluoError):
    """A fit did not converge; outputs were still written."""


# ---- building module objects from a Config


def tls_params(cfg: Config) -> TlsParams:
    ph = cfg.physics
    return TlsParams(ph.gamma, ph.rabi, ghz_to_angular(ph.detuning), ph.dephasing)


def map_config(cfg: Config) -> MapConfig:
    mc = cfg.map
    axis = Grid1D.centered(mc.center, mc.half_span, mc.count)
    return MapConfig(
        tls=tls_params(cfg),
        center=mc.center,
        laser_axis=axis,
        photon_axis=axis,
        laser_linewidth=mc.laser_linewidth,
        detector_fwhm=mc.detector_fwhm,
        inhomogeneous_fwhm=mc.inhomogeneous_fwhm,
        diagonal_lorentzian_fwhm=mc.diagonal_lorentzian_fwhm,
        regime=mc.regime,
    )


def rate_params(cfg: Config):
    from .kmc import RateParams

    k = cfg.kmc
    return RateParams(
        gamma_rad=k.gamma_rad, gen_ab=k.gen_ab, pump_res=k.pump_res, relax=k.relax,
        loss_res=k.loss_res, rad_excited=k.rad_excited, spin_flip=k.spin_flip,
        asym_gen=k.asym_gen, loss_excited_only=k.loss_excited_only,
    )


def _meta(cfg: Config, **extra):
    return {"scenario": cfg.scenario, "seed": cfg.seed, **extra}


# ---- scenarios; each returns a list of (path, description)


def run_map(cfg: Config, out: Path):
    m = fluorescence_map(map_config(cfg))
    files = []
    p = out / "map.csv"
    rio.write_map_csv(p, m, _meta(cfg, regime=cfg.map.regime))
    files.append((p, f"{m.values.shape[0]}x{m.values.shape[1]} map, total {m.total():.4g}"))
    if cfg.map.pgm:
        p = out / "map.pgm"
        rio.write_pgm(p, m)
        files.append((p, "16-bit heatmap"))
    env = envelope(m)
    p = out / "envelope.csv"
    rio.write_table(
        p,
        {"laser_ghz": env.laser, "peak": np.nan_to_num(env.peak), "photon_ghz":
         np.nan_to_num(env.location), "valid": env.valid.astype(int)},
        _meta(cfg),
    )
    files.append((p, f"{int(env.valid.sum())} valid envelope points"))
    return files


def run_ple(cfg: Config, out: Path):
    sweep = Grid1D.centered(cfg.map.center, cfg.ple.half_span, cfg.ple.count)
    wl, rate = ple_spectrum(map_config(cfg), sweep)
    p = out / "ple.csv"
    rio.write_table(p, {"laser_ghz": wl, "rate_per_ns": rate}, _meta(cfg))
    try:
        desc = f"FWHM {estimate_fwhm(wl, rate):.4g} GHz"
    except ResofluoError:
        desc = "no resolvable peak"
    return [(p, desc)]


def run_g2(cfg: Config, out: Path):
    tau = np.linspace(0.0, cfg.g2.tau_max, cfg.g2.count)
    g = g2_with_background(tls_params(cfg), cfg.g2.signal_fraction, tau)
    p = out / "g2.csv"
    rio.write_table(p, {"tau_ns": tau, "g2": g}, _meta(cfg))
    return [(p, f"g2(0) = {g[0]:.6g}")]


def run_kmc(cfg: Config, out: Path, threads: int):
    from .kmc import QdState, find_intensity_maximum, sweep_intensity

    k = cfg.kmc
    start = {"empty": QdState(), "electron": QdState(e_up=1), "hole": QdState(h_up=1)}
    res = sweep_intensity(rate_params(cfg), k.p_hene, k.p_res, k.t_max, k.trajectories,
                          cfg.seed, threads=threads, initial_state=start[k.initial_state])
    rows = list(res.rows())
    cols = {c: np.array([r[c] for r in rows]) for c in
            ("p_hene", "p_res", "exciton", "positive_trion", "negative_trion", "other", "trion")}
    meta = _meta(cfg, gen_ab=k.gen_ab, pump_res=k.pump_res, loss_res=k.loss_res,
                 t_max=k.t_max, trajectories=k.trajectories, initial_state=k.initial_state)
    p = out / "sweep.csv"
    rio.write_table(p, cols, meta)
    files = [(p, f"{len(rows)} cells, trion counts per second")]
    if len(k.p_hene) >= 5:
        tr = res.trion()
        maxima = {"p_res": [], "p_hene_max": [], "value": [], "index": [], "at_boundary": []}
        for i, pr in enumerate(k.p_res):
            try:
                mx = find_intensity_maximum(k.p_hene, tr[i])
                vals = (mx.p_hene, mx.value, mx.index, int(mx.at_boundary))
            except ResofluoError:
                vals = (np.nan, np.nan, -1, 1)
            for key, v in zip(("p_hene_max", "value", "index", "at_boundary"), vals):
                maxima[key].append(v)
            maxima["p_res"].append(pr)
        p = out / "maxima.csv"
        rio.write_table(p, maxima, meta)
        flags = "".join("B" if b else "i" for b in maxima["at_boundary"])
        files.append((p, f"intensity maxima per P_res (i=interior, B=boundary): {flags}"))
    return files


def _load_series(cfg: Config):
    try:
        x, y, sigma = rio.read_series(cfg.fit.input)
    except OSError as exc:
        raise OSError(f"cannot read fit input {cfg.fit.input}: {exc}") from exc
    data = DataSeries(x, y, sigma)
    return data.poisson_weighted() if cfg.fit.poisson else data


def _write_fit(cfg: Config, out: Path, res, model, data: DataSeries):
    p1 = out / "fit.json"
    rio.write_json(p1, {"scenario": cfg.scenario, "seed": cfg.seed, **res.to_dict()})
    files = [(p1, ("converged" if res.converged else "NOT converged") + ": "
              + ", ".join(f"{k}={v:.6g}" for k, v in res.params.items()))]
    if res.converged and all(np.isfinite(v) for v in res.params.values()):
        p2 = out / "fit_curve.csv"
        rio.write_table(p2, {"x": data.x, "y": data.y, "model": model(data.x, **res.params)},
                        _meta(cfg))
        files.append((p2, "data and fitted curve"))
    for w in res.warnings:
        log.warning("%s", w)
    if not res.converged:
        raise ConvergenceError(res.message or "fit did not converge", files)
    return files


def run_fit(cfg: Config, out: Path):
    data = _load_series(cfg)
    if cfg.scenario == "fit-ple":
        res = fit_ple_voigt(data, cfg.fit.omega_r, cfg.fit.gamma)
        lw = ple_lorentzian_fwhm(cfg.fit.omega_r, cfg.fit.gamma)

        def model(x, amplitude, center, gaussian_fwhm, baseline):
            return baseline + amplitude * voigt_density(x - center, lw, gaussian_fwhm)
    elif cfg.scenario == "fit-g2":
        res, model = fit_g2(data), g2_model
    else:
        res, model = fit_exponential_plateau(data), plateau_model
    return _write_fit(cfg, out, res, model, data)


# ---- synthetic data


def synth_curve(cfg: Config):
    """(x, noiseless y, params) for the configured synthetic model."""
    s = cfg.synth
    if s.model == "ple":
        lo, hi = -6.0, 6.0
        params = {"amplitude": 1.0, "center": 0.0, "gaussian_fwhm": 2.5, "baseline": 0.0}
    elif s.model == "g2":
        lo, hi = 0.0, 20.0
        params = {"omega": cfg.physics.rabi, "gamma": cfg.physics.gamma,
                  "signal_fraction": cfg.g2.signal_fraction}
    else:
        lo, hi = 0.0, 100.0
        params = {"amplitude": 1.3, "decay": 20.0, "plateau": 1.4}
    unknown = set(s.params) - set(params)
    if unknown:
        raise ConfigError(f"synth.params: unknown keys {sorted(unknown)} "
                          f"(valid keys: {', '.join(sorted(params))})")
    params.update(s.params)
    lo = lo if s.x_start is None else s.x_start
    hi = hi if s.x_stop is None else s.x_stop
    if not hi > lo:
        raise ConfigError("synth.x_stop: must be > synth.x_start")
    n = s.count or {"ple": 161, "g2": 4001, "plateau": 41}[s.model]
    x = np.linspace(lo, hi, n)
    if s.model == "ple":
        lw = ple_lorentzian_fwhm(cfg.fit.omega_r, cfg.fit.gamma)
        y = params["baseline"] + params["amplitude"] * voigt_density(
            x - params["center"], lw, params["gaussian_fwhm"])
    elif s.model == "g2":
        y = g2_model(x, **params)
    else:
        y = plateau_model(x, **params)
    return x, y, params


def synth_data(cfg: Config, rng: np.random.Generator):
    """Noisy samples (x, y, sigma) of the synthetic model.

    Gaussian noise has a constant sigma of ``noise_level`` times the curve
    maximum. Poisson noise first scales the curve to ``peak_counts``.
    """
    s = cfg.synth
    x, y, _ = synth_curve(cfg)
    peak = float(np.max(np.abs(y)))
    if s.noise == "none":
        return x, y, np.full_like(y, max(s.noise_level * peak, 1e-300))
    if s.noise == "gaussian":
        sigma = np.full_like(y, s.noise_level * peak)
        return x, y + sigma * rng.standard_normal(y.size), np.maximum(sigma, 1e-300)
    if np.any(y < 0):
        raise ConfigError("synth.noise: poisson noise needs a non-negative curve")
    lam = y * (s.peak_counts / peak)
    counts = rng.poisson(lam).astype(float)
    return x, counts, np.sqrt(np.maximum(counts, 1.0))


def run_synth(cfg: Config, out: Path):
    rng = np.random.default_rng(cfg.seed)
    x, y, sigma = synth_data(cfg, rng)
    p = out / "synth.csv"
    _, _, params = synth_curve(cfg)
    extra = {f"p_{k}": v for k, v in params.items()}
    rio.write_table(p, {"x": x, "y": y, "sigma": sigma},
                    _meta(cfg, model=cfg.synth.model, noise=cfg.synth.noise, **extra))
    return [(p, f"{x.size} {cfg.synth.model} samples, {cfg.synth.noise} noise")]


# ---- driver


def _check_output_dir(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    if not out.is_dir():
        raise OSError(f"output path {out} is not a directory")
    fd, name = tempfile.mkstemp(dir=out, prefix=".write-test-")
    os.close(fd)
    os.unlink(name)


def run(cfg: Config, threads: int = 0, out: Path | None = None):
    """Execute a validated config. Returns the list of (path, description)."""
    out = Path(out if out is not None else cfg.output)
    _check_output_dir(out)
    if cfg.scenario == "map":
        files = run_map(cfg, out)
    elif cfg.scenario == "ple":
        files = run_ple(cfg, out)
    elif cfg.scenario == "g2":
        files = run_g2(cfg, out)
    elif cfg.scenario == "kmc-sweep":
        files = run_kmc(cfg, out, threads)
    elif cfg.scenario == "synth":
        files = run_synth(cfg, out)
    else:
        files = run_fit(cfg, out)
    p = out / "config.json"
    p.write_text(cfg.to_json())
    files.append((p, "effective configuration"))
    return files


def _split_overrides(extra):
    """``--section.key value`` / ``--section.key=value`` pairs into a dict."""
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key, sep, val = tok[2:].partition("=")
        if not sep:
            try:
                val = next(it)
            except StopIteration:
                raise ConfigError(f"{key}: missing value") from None
        out[key] = parse_value(val)
    return out


def build_parser():
    ap = argparse.ArgumentParser(
        prog="resofluo",
        description="Resonance-fluorescence maps, PLE, g2, carrier Monte Carlo and fits.",
        epilog="Any config key can be overridden as --section.key VALUE.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("scenario", choices=SCENARIOS)
    ap.add_argument("--config", help="JSON configuration file")
    ap.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int, default=0, help="worker threads, 0 = auto")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        overrides = _split_overrides(extra)
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output"] = args.out
        if args.threads < 0:
            raise ConfigError("--threads: must be >= 0")
        cfg = parse_config(args.config, overrides, scenario=args.scenario)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = run(cfg, threads=args.threads)
    except ConvergenceError as exc:
        for path, desc in exc.args[1]:
            print(f"{path}: {desc}")
        print(f"convergence failure: {exc.args[0]}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InvalidParameterError, GridMismatchError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, rio.FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ResofluoError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path, desc in files:
        print(f"{path}: {desc}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

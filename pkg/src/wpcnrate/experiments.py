"""Parameter sweeps behind the command line tool.

An experiment is one INI section (keys before the first section apply to every
experiment).  Named experiments ``fig2`` ... ``fig8`` pin their sweep variable
and come with default grids; ``custom`` sweeps any system parameter.

Example::

    [fig6]
    eps_th = 1e-4

    [ftr_vs_psi]
    name = custom
    sweep_var = psi_db
    grid = linspace(0, 10, 21)
    schemes = FTR
    forms = asymptotic, fbl
"""

import configparser
import csv
import io
import math
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import schemes
from .channel import (
    FadingParams,
    SystemParams,
    product_cdf,
    product_cdf_tail_approx,
)
from .exceptions import (
    ConfigError,
    InfeasibleError,
    UnsupportedConfigurationError,
)
from .fbl import ApproximationRegimeWarning
from .montecarlo import SimConfig, plan_scheme, simulate

__all__ = [
    "ExperimentSpec",
    "parse_config",
    "parse_config_text",
    "dump_config",
    "parse_grid",
    "run_experiment",
    "emit_csv",
    "config_from_csv",
    "SweepResult",
]

NAMES = ("fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "custom")
SCHEME_NAMES = ("FTR", "KSC", "fCSI")
FORM_NAMES = ("asymptotic", "fbl")
_PREFIX = {
    ("FTR", "asymptotic"): "ftr_asym", ("FTR", "fbl"): "ftr_fbl",
    ("KSC", "asymptotic"): "ksc_asym", ("KSC", "fbl"): "ksc_fbl",
    ("fCSI", "asymptotic"): "fcsi_asym", ("fCSI", "fbl"): "fcsi_fbl",
}

# baseline parameters
DEFAULTS = {
    "m1": 5.0, "m2": 2.0, "M": 1, "psi": 1.0, "v": 1000, "n": 200,
    "eps_th": 1e-2, "k0": 16, "delta": 1200, "inverse": "closed_form",
}

# sweep variable, default grid and parameter overrides of the named experiments
FIGURES = {
    "fig2": ("chi", "logspace(-1, 1, 41)", {}),
    "fig3": ("psi_db", "linspace(0, 10, 251)", {"M": 1}),
    "fig4": ("n", "range(20, 1181)", {"M": 4, "eps_th": 1e-4}),
    "fig5": ("eps_th", "logspace(-6, -1, 126)", {"M": 4}),
    "fig6": ("M", "range(1, 9)", {"eps_th": 1e-4}),
    "fig7": ("k0", "range(8, 257, 8)", {"M": 4, "eps_th": 1e-3}),
    "fig8": ("w", "logspace(-4, 0, 81)", {"m1": 4.0, "m2": 2.0}),
}

SWEEPABLE = ("psi_db", "psi", "n", "v", "eps_th", "M", "k0", "m1", "m2")
_INT_KEYS = {"M", "v", "n", "k0", "delta", "mc_trials", "seed"}
_FLOAT_KEYS = {"m1", "m2", "psi", "eps_th"}
_KNOWN_KEYS = (set(DEFAULTS) | {"name", "psi_db", "sweep_var", "grid", "schemes", "forms",
                                "mc_trials", "seed"})


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "custom"
    label: str = "custom"
    params: dict = field(default_factory=lambda: dict(DEFAULTS))
    sweep_var: str = None
    grid_expr: str = None
    grid: tuple = ()
    schemes: tuple = SCHEME_NAMES
    forms: tuple = FORM_NAMES
    mc_trials: int = 0
    seed: int = 0

    def system(self, **overrides):
        p = dict(self.params)
        p.update(overrides)
        return (SystemParams(FadingParams(p["m1"], p["m2"], p["M"]), p["psi"], p["v"], p["n"]),
                schemes.ReliabilityTarget(p["eps_th"], p["k0"]))


# -- parsing --------------------------------------------------------------------

_CALL = re.compile(r"^\s*(linspace|logspace|range)\s*\((.*)\)\s*$")


def parse_grid(text, integer=False):
    """Grid from ``"a, b, c"``, ``linspace(a, b, num)``, ``logspace(a, b, num)``
    (base-10 exponents) or ``range(start, stop[, step])`` (stop excluded).

    The result must be nonempty and strictly increasing.
    """
    m = _CALL.match(text)
    try:
        if m:
            fn, args = m.group(1), [float(a) for a in m.group(2).split(",")]
            if fn == "range":
                if len(args) not in (2, 3) or any(a != int(a) for a in args):
                    raise ValueError("range takes 2 or 3 integer arguments")
                values = list(range(*(int(a) for a in args)))
            else:
                if len(args) != 3 or args[2] != int(args[2]) or args[2] < 1:
                    raise ValueError(f"{fn} takes (start, stop, num)")
                values = list(getattr(np, fn)(args[0], args[1], int(args[2])))
        else:
            values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}", field="grid") from exc
    if not values:
        raise ConfigError(f"grid {text!r} is empty", field="grid")
    if any(not math.isfinite(x) for x in values):
        raise ConfigError(f"grid {text!r} has non-finite values", field="grid")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"grid {text!r} is not strictly increasing", field="grid")
    if integer:
        if any(x != int(x) for x in values):
            raise ConfigError(f"grid {text!r} must hold integers", field="grid")
        return tuple(int(x) for x in values)
    return tuple(float(x) for x in values)


def _list(value, allowed, key):
    items = tuple(t.strip() for t in value.split(",") if t.strip())
    bad = [t for t in items if t not in allowed]
    if bad or not items:
        raise ConfigError(f"{key}: expected a subset of {allowed}, got {value!r}", field=key)
    return tuple(t for t in allowed if t in items)


def _convert(key, raw, line=None):
    try:
        if key in _INT_KEYS:
            f = float(raw)
            if f != int(f):
                raise ValueError("not an integer")
            return int(f)
        if key in _FLOAT_KEYS or key == "psi_db":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} = {raw!r}: {exc}", field=key, line=line) from exc
    return raw.strip()


def _build_spec(label, items, lines):
    """``items`` maps key -> raw string; ``lines`` maps key -> source line."""
    for key in items:
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"unknown field {key!r}", field=key, line=lines.get(key))
    name = items.get("name", label if label in NAMES else "custom").strip()
    if name not in NAMES:
        raise ConfigError(f"unknown experiment name {name!r}", field="name",
                          line=lines.get("name"))
    params = dict(DEFAULTS)
    sweep_var, grid_expr = None, None
    if name in FIGURES:
        sweep_var, grid_expr, overrides = FIGURES[name]
        params.update(overrides)
    values = {k: _convert(k, v, lines.get(k)) for k, v in items.items()}
    if "psi" in values and "psi_db" in values:
        raise ConfigError("give psi or psi_db, not both", field="psi_db", line=lines.get("psi_db"))
    if "psi_db" in values:
        values["psi"] = 10.0 ** (values.pop("psi_db") / 10.0)  # the one dB conversion
    for key in DEFAULTS:
        if key in values:
            params[key] = values[key]
    if params["inverse"] not in ("closed_form", "numeric"):
        raise ConfigError(f"inverse must be closed_form or numeric, got {params['inverse']!r}",
                          field="inverse", line=lines.get("inverse"))
    if "sweep_var" in values:
        if name != "custom" and values["sweep_var"] != sweep_var:
            raise ConfigError(f"{name} sweeps {sweep_var}, not {values['sweep_var']!r}",
                              field="sweep_var", line=lines.get("sweep_var"))
        sweep_var = values["sweep_var"]
        if name == "custom" and sweep_var not in SWEEPABLE:
            raise ConfigError(f"sweep_var must be one of {SWEEPABLE}", field="sweep_var",
                              line=lines.get("sweep_var"))
    if "grid" in values:
        grid_expr = values["grid"]
        if sweep_var is None:
            raise ConfigError("grid given without sweep_var", field="grid", line=lines.get("grid"))
    if sweep_var is not None and grid_expr is None:
        raise ConfigError("sweep_var given without grid", field="grid")
    grid = ()
    if sweep_var is not None:
        try:
            grid = parse_grid(grid_expr, integer=sweep_var in _INT_KEYS)
        except ConfigError as exc:
            raise ConfigError(str(exc), field="grid", line=lines.get("grid")) from exc
    spec = ExperimentSpec(
        name=name, label=label, params=params, sweep_var=sweep_var, grid_expr=grid_expr,
        grid=grid,
        schemes=_list(values["schemes"], SCHEME_NAMES, "schemes") if "schemes" in values
        else SCHEME_NAMES,
        forms=_list(values["forms"], FORM_NAMES, "forms") if "forms" in values else FORM_NAMES,
        mc_trials=values.get("mc_trials", 0), seed=values.get("seed", 0),
    )
    _validate(spec, lines)
    return spec


def _validate(spec, lines):
    p = spec.params
    try:
        spec.system()
    except ValueError as exc:
        raise ConfigError(str(exc), field=_guess_field(str(exc)), line=None) from exc
    if p["delta"] < 2:
        raise ConfigError("delta must be >= 2", field="delta", line=lines.get("delta"))
    if spec.mc_trials < 0:
        raise ConfigError("mc_trials must be >= 0", field="mc_trials",
                          line=lines.get("mc_trials"))
    if not 0 <= spec.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", field="seed",
                          line=lines.get("seed"))
    if spec.sweep_var == "n" and max(spec.grid) >= p["delta"]:
        raise ConfigError("n grid must stay below delta", field="grid", line=lines.get("grid"))
    if spec.sweep_var == "eps_th" and not (0 < min(spec.grid) and max(spec.grid) <= 0.1):
        raise ConfigError("eps_th grid must lie in (0, 0.1]", field="grid",
                          line=lines.get("grid"))


def _guess_field(message):
    m = re.match(r"(\w+) must", message)
    return m.group(1) if m else None


def parse_config_text(text, source="<config>"):
    """Experiments described by INI ``text`` (see module docstring)."""
    parser = configparser.ConfigParser(interpolation=None, default_section="\0none",
                                       inline_comment_prefixes=(";",))
    parser.optionxform = str  # keys are case sensitive ("M")
    body = "[\0top]\n" + text
    try:
        parser.read_string(body, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"{source}: {exc}".replace("\0top", "top level"),
                          line=None if line is None else line - 1) from exc
    line_of = _key_lines(text)
    top = dict(parser["\0top"])
    sections = [s for s in parser.sections() if s != "\0top"]
    if not sections:
        return [_build_spec("custom", top, line_of.get(None, {}))]
    specs = []
    for sec in sections:
        items = dict(top)
        items.update(parser[sec])
        lines = dict(line_of.get(None, {}))
        lines.update(line_of.get(sec, {}))
        specs.append(_build_spec(sec, items, lines))
    return specs


def _key_lines(text):
    out, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, 1)[0].strip()
            out.setdefault(section, {})[key] = i
    return out


def parse_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))


def dump_config(spec):
    """INI text that parses back to ``spec``."""
    lines = [f"[{spec.label}]", f"name = {spec.name}"]
    for key in DEFAULTS:
        value = spec.params[key]
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    if spec.sweep_var is not None:
        lines.append(f"sweep_var = {spec.sweep_var}")
        lines.append(f"grid = {spec.grid_expr}")
    lines.append(f"schemes = {', '.join(spec.schemes)}")
    lines.append(f"forms = {', '.join(spec.forms)}")
    lines.append(f"mc_trials = {spec.mc_trials}")
    lines.append(f"seed = {spec.seed}")
    return "\n".join(lines) + "\n"


# -- running ----------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    spec: ExperimentSpec
    columns: tuple
    rows: tuple


def _columns(spec):
    if spec.name == "fig2":
        return ("chi", "chi_db", "n_star_frac", "n_star", "v_star")
    if spec.name == "fig8":
        return ("w", "cdf_exact", "cdf_ap1", "cdf_ap2", "rel_err_ap1", "rel_err_ap2")
    cols = [spec.sweep_var] if spec.sweep_var else []
    if spec.sweep_var == "psi_db":
        cols.append("psi")
    for sch in spec.schemes:
        for form in spec.forms:
            p = _PREFIX[sch, form]
            cols += [f"{p}_feasible", f"{p}_kbar", f"{p}_p_k0", f"{p}_error"]
            if sch == "FTR" and form == "asymptotic":
                cols.append(f"{p}_n_star")
            if sch != "FTR":
                cols += [f"{p}_threshold", f"{p}_eps_star"]
            if spec.mc_trials:
                cols += [f"{p}_mc_error", f"{p}_mc_error_ci99", f"{p}_mc_kbar", f"{p}_mc_kbar_se",
                         f"{p}_mc_p_k0"]
    return tuple(cols)


def _overrides(spec, x):
    var = spec.sweep_var
    if var is None:
        return {}
    if var == "psi_db":
        return {"psi": 10.0 ** (x / 10.0)}
    if var == "n":
        return {"n": int(x), "v": int(spec.params["delta"] - x)}
    return {var: x}


def _solve(sp, rt, sch, form, inverse):
    if sch == "FTR":
        return (schemes.ftr_k_fbl(sp, rt, inverse) if form == "fbl"
                else schemes.ftr_k_asymptotic(sp, rt, inverse))
    if sch == "KSC":
        return schemes.ksc_fbl_outcome(sp, rt) if form == "fbl" else schemes.ksc_asymptotic(sp, rt)
    return schemes.fcsi_fbl(sp, rt) if form == "fbl" else schemes.fcsi_asymptotic(sp, rt)


def _mc_seed(seed, row, stream):
    ss = np.random.SeedSequence(seed, spawn_key=(row, stream))
    return int(ss.generate_state(1, np.uint64)[0])


def _point(args):
    spec, index, x = args
    row = {}
    if spec.name == "fig2":
        chi = float(x)
        frac = schemes.ftr_optimal_fraction(chi)
        n_star, v_star = schemes.ftr_optimal_blocklengths(int(spec.params["delta"]), chi)
        return {"chi": chi, "chi_db": 10.0 * math.log10(chi), "n_star_frac": frac,
                "n_star": n_star, "v_star": v_star}
    if spec.name == "fig8":
        fp = FadingParams(spec.params["m1"], spec.params["m2"], spec.params["M"])
        exact = product_cdf(fp, x)
        try:
            ap1 = product_cdf_tail_approx(fp, x, exponential=False)
            ap2 = product_cdf_tail_approx(fp, x, exponential=True)
        except UnsupportedConfigurationError:
            ap1 = ap2 = math.nan
        return {"w": x, "cdf_exact": exact, "cdf_ap1": ap1, "cdf_ap2": ap2,
                "rel_err_ap1": abs(ap1 - exact) / exact, "rel_err_ap2": abs(ap2 - exact) / exact}
    if spec.sweep_var is not None:
        row[spec.sweep_var] = x
    if spec.sweep_var == "psi_db":
        row["psi"] = 10.0 ** (x / 10.0)
    sp, rt = spec.system(**_overrides(spec, x))
    inverse = spec.params["inverse"]
    for s_idx, sch in enumerate(spec.schemes):
        for f_idx, form in enumerate(spec.forms):
            p = _PREFIX[sch, form]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ApproximationRegimeWarning)
                out = _solve(sp, rt, sch, form, inverse)
            row[f"{p}_feasible"] = bool(out.feasible)
            if out.feasible:
                row[f"{p}_kbar"] = out.kbar
                row[f"{p}_p_k0"] = out.p_k0
                row[f"{p}_error"] = out.error
                if out.threshold is not None:
                    row[f"{p}_threshold"] = out.threshold.threshold
                    row[f"{p}_eps_star"] = out.threshold.eps_star
            if sch == "FTR" and form == "asymptotic":
                chi = schemes.ftr_chi(sp, rt, inverse)
                row[f"{p}_n_star"] = schemes.ftr_optimal_blocklengths(sp.delta, chi)[0]
            if spec.mc_trials and out.feasible:
                cfg = SimConfig(spec.mc_trials, _mc_seed(spec.seed, index, s_idx * 2 + f_idx),
                                sch, form, inverse)
                try:
                    plan = plan_scheme(sp, rt, sch, form, inverse)
                except InfeasibleError:
                    continue
                rep = simulate(sp, rt, cfg, plan)
                row[f"{p}_mc_error"] = rep.error_rate
                row[f"{p}_mc_error_ci99"] = rep.error_ci99
                row[f"{p}_mc_kbar"] = rep.kbar_hat
                row[f"{p}_mc_kbar_se"] = rep.kbar_se
                row[f"{p}_mc_p_k0"] = rep.p_k0_hat
    return row


def run_experiment(spec, jobs=1):
    """Evaluate every grid point of ``spec``; rows come back in grid order."""
    grid = spec.grid if spec.sweep_var is not None else (None,)
    tasks = [(spec, i, x) for i, x in enumerate(grid)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_point, tasks))
    else:
        rows = [_point(t) for t in tasks]
    return SweepResult(spec, _columns(spec), tuple(rows))


# -- CSV ------------------------------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "" if not math.isfinite(value) else repr(value)


def emit_csv(result, path=None):
    """Write ``result`` as CSV (to ``path``, or return the text when ``path`` is
    None).  Comment lines starting with '#' record the configuration."""
    buf = io.StringIO(newline="")
    buf.write("# wpcnrate sweep\n")
    for line in dump_config(result.spec).splitlines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(result.columns)
    for row in result.rows:
        writer.writerow([_fmt(row.get(c)) for c in result.columns])
    text = buf.getvalue()
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


def config_from_csv(path_or_text):
    """Recover the :class:`ExperimentSpec` recorded in a CSV's comment lines."""
    if "\n" in str(path_or_text):
        text = str(path_or_text)
    else:
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    lines = [ln[2:] for ln in text.splitlines() if ln.startswith("# ") and
             not ln.startswith("# wpcnrate")]
    specs = parse_config_text("\n".join(lines) + "\n")
    return specs[0]


def with_seed(spec, seed):
    return replace(spec, seed=seed)


def with_mc(spec, trials):
    return replace(spec, mc_trials=trials)

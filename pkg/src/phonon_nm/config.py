"""Strict experiment configs: INI schemas, unit handling, canonical dumps.

The command line runs one named experiment per invocation, and everything
the run needs sits in one flat-sectioned key=value file.  Parsing is
deliberately unforgiving: unknown sections or keys are errors, physical
parameters have no hidden defaults (only numerics do), and out-of-range
values are rejected here rather than deep inside a solver.  Frequencies are
given in GHz (ordinary, not angular), fields in tesla, temperatures in
kelvin; each experiment declares its own time convention next to the
window key.

A resolved config knows how to print itself back as canonical INI text with
every default materialized.  That text goes into the run's metadata sidecar,
and feeding it back through the parser reproduces the exact same resolved
values (floats are emitted with repr, which round-trips bitwise).
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .siv import GHZ


class ConfigError(ValueError):
    """Anything wrong with a config file, its keys, or their values."""


EXPERIMENTS = (
    "trace-distance", "nd-bz", "blp-map", "blp-temp",
    "meanfield-scaling", "spectrum-map", "rates-dump", "validate",
)


# --- field kinds and schema plumbing ---

@dataclass(frozen=True)
class Field:
    """One key in one section: type, requiredness, bounds."""

    kind: str                  # float | int | str | floatlist | intlist
    required: bool = True
    default: object = None
    minimum: object = None     # inclusive unless exclusive_min
    exclusive_min: bool = False
    choices: tuple = ()


def _convert(name, spec, raw):
    try:
        if spec.kind == "float":
            val = float(raw)
        elif spec.kind == "int":
            val = int(raw)
        elif spec.kind == "str":
            val = raw.strip()
        elif spec.kind == "floatlist":
            val = tuple(float(tok) for tok in raw.split(",") if tok.strip())
            if not val:
                raise ValueError("empty list")
        elif spec.kind == "intlist":
            val = tuple(int(tok) for tok in raw.split(",") if tok.strip())
            if not val:
                raise ValueError("empty list")
        else:
            raise AssertionError("unknown kind %r" % spec.kind)
    except ValueError as err:
        raise ConfigError("%s: cannot read %r as %s (%s)"
                          % (name, raw, spec.kind, err)) from None
    if spec.choices and val not in spec.choices:
        raise ConfigError("%s: %r is not one of %s" % (name, val, list(spec.choices)))
    if spec.minimum is not None:
        vals = val if isinstance(val, tuple) else (val,)
        for v in vals:
            bad = v <= spec.minimum if spec.exclusive_min else v < spec.minimum
            if bad:
                op = ">" if spec.exclusive_min else ">="
                raise ConfigError("%s: %r must be %s %s" % (name, v, op, spec.minimum))
    return val


def _fmt(val):
    if isinstance(val, tuple):
        return ", ".join(_fmt(v) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


# --- section vocabularies ---

def _siv_section(static_field):
    keys = {
        "lam_ghz": Field("float", minimum=0.0),
        "gamma_x_ghz": Field("float"),
        "gamma_y_ghz": Field("float"),
        "ham_factor": Field("float", minimum=0.0),
    }
    if static_field:
        keys["bx_t"] = Field("float")
        keys["bz_t"] = Field("float")
    return keys


def _mode_section(coupling="pair", dissipative=True):
    keys = {"omega_ph_ghz": Field("float", minimum=0.0, exclusive_min=True)}
    if coupling == "pair":
        keys["g1_ghz"] = Field("float")
        keys["g2_ghz"] = Field("float")
    elif coupling == "list":
        keys["g_list_ghz"] = Field("floatlist", minimum=0.0, exclusive_min=True)
    if dissipative:
        keys["quality_factor"] = Field("float", minimum=0.0, exclusive_min=True)
        keys["temperature_k"] = Field("float", minimum=0.0)
    keys["n_max"] = Field("int", required=False, default=10, minimum=1)
    return keys


_DISSIPATION = {
    "gamma_siv_ghz": Field("float", minimum=0.0),
    "n_delta": Field("float", minimum=0.0),
}

_BATH = {
    "j0_scaled": Field("float", minimum=0.0, exclusive_min=True),
    "width_ghz": Field("float", minimum=0.0, exclusive_min=True),
    "center_ghz": Field("float", minimum=0.0, exclusive_min=True),
    "omega_max_ghz": Field("float", required=False, default=0.0, minimum=0.0),
    "cross_mode": Field("str", choices=("full", "zero")),
}


def _window_section(window, samples, extra=()):
    keys = {
        "window": Field("float", required=False, default=window,
                        minimum=0.0, exclusive_min=True),
        "samples": Field("int", required=False, default=samples, minimum=16),
    }
    for name, spec in extra:
        keys[name] = spec
    return keys


def _optimizer_section(pop, gen):
    return {
        "algorithm": Field("str", required=False, default="de", choices=("de",)),
        "pop_size": Field("int", required=False, default=pop, minimum=4),
        "max_gen": Field("int", required=False, default=gen, minimum=1),
        "f_weight": Field("float", required=False, default=0.7,
                          minimum=0.0, exclusive_min=True),
        "cr": Field("float", required=False, default=0.5, minimum=0.0),
        "seed": Field("int", required=False, default=0, minimum=0),
    }


def _output_section(required=True):
    return {
        "path": Field("str", required=required, default=None),
        "format": Field("str", required=False, default="csv", choices=("csv",)),
    }


# --- experiment schemas ---

SCHEMAS = {
    "trace-distance": {
        "siv": _siv_section(static_field=True),
        "mode": dict(_mode_section(), omega_off_ghz=Field(
            "float", minimum=0.0, exclusive_min=True)),
        "dissipation": _DISSIPATION,
        "initial": {"manifold_n": Field("int", required=False, default=1, minimum=0)},
        "window": _window_section(30.0, 3000),   # window in units of |g| t
        "output": _output_section(),
    },
    "nd-bz": {
        "siv": _siv_section(static_field=False),
        "mode": _mode_section(coupling="list"),
        "dissipation": _DISSIPATION,
        "initial": {"manifold_n": Field("int", required=False, default=1, minimum=0)},
        # window is |g| t; window_seconds, when given, wins and is real time
        # (the right basis for comparing couplings)
        "window": _window_section(30.0, 3000, extra=(
            ("window_seconds", Field("float", required=False, minimum=0.0,
                                     exclusive_min=True)),
        )),
        "grid": {
            "bz_min_t": Field("float"),
            "bz_max_t": Field("float"),
            "count": Field("int", minimum=2),
        },
        "output": _output_section(),
    },
    "blp-map": {
        "siv": _siv_section(static_field=False),
        "mode": _mode_section(),
        "dissipation": _DISSIPATION,
        "window": _window_section(30.0, 2000, extra=(
            ("samples_low", Field("int", required=False, default=400, minimum=16)),
        )),                                      # window in units of |g| t
        "grid": {
            "bx_max_t": Field("float", minimum=0.0, exclusive_min=True),
            "bz_max_t": Field("float", minimum=0.0, exclusive_min=True),
            "bx_count": Field("int", minimum=2),
            "bz_count": Field("int", minimum=2),
        },
        "optimizer": _optimizer_section(24, 12),
        "output": _output_section(),
    },
    "blp-temp": {
        "siv": _siv_section(static_field=True),
        "bath": _BATH,
        "window": _window_section(20.0, 2000, extra=(
            ("subdivide", Field("int", required=False, default=1, minimum=1)),
        )),                                      # window in units of 1/center
        "grid": {
            "t_min_k": Field("float", minimum=0.0, exclusive_min=True),
            "t_max_k": Field("float", minimum=0.0, exclusive_min=True),
            "count": Field("int", minimum=2),
            "spacing": Field("str", required=False, default="geom",
                             choices=("geom", "linear", "tanh")),
            "tanh_scale_k": Field("float", required=False, default=0.3,
                                  minimum=0.0, exclusive_min=True),
        },
        "optimizer": _optimizer_section(40, 25),
        "output": _output_section(),
    },
    "meanfield-scaling": {
        "meanfield": {
            "omega_s_ghz": Field("float", minimum=0.0, exclusive_min=True),
            "omega_ph_ghz": Field("float", minimum=0.0, exclusive_min=True),
            "g_ghz": Field("float", minimum=0.0, exclusive_min=True),
            "quality_factor": Field("float", minimum=0.0, exclusive_min=True),
            "gamma_siv_ghz": Field("float", minimum=0.0),
        },
        "scan": {
            "alpha_min": Field("float", minimum=0.0, exclusive_min=True),
            "alpha_max": Field("float", minimum=0.0, exclusive_min=True),
            "count": Field("int", minimum=2),
            "t_list_k": Field("floatlist", minimum=0.0),
        },
        "window": _window_section(2.5, 3000),    # window in units of |g| t
        "output": _output_section(),
    },
    "spectrum-map": {
        "siv": _siv_section(static_field=False),
        "mode": _mode_section(dissipative=False),
        "grid": {
            "bx_max_t": Field("float", minimum=0.0, exclusive_min=True),
            "bz_max_t": Field("float", minimum=0.0, exclusive_min=True),
            "bx_count": Field("int", minimum=2),
            "bz_count": Field("int", minimum=2),
            "pair": Field("intlist", minimum=1),
        },
        "output": _output_section(),
    },
    "rates-dump": {
        "bath": dict(_BATH, temperature_k=Field("float", minimum=0.0)),
        "dump": {
            "omega_ghz": Field("float"),
            "t_max_ns": Field("float", minimum=0.0, exclusive_min=True),
            "samples": Field("int", required=False, default=200, minimum=2),
            "subdivide": Field("int", required=False, default=1, minimum=1),
        },
        "output": _output_section(),
    },
    "validate": {
        "siv": _siv_section(static_field=True),
        "mode": _mode_section(),
        "dissipation": _DISSIPATION,
        "bath": dict(_BATH, temperature_k=Field("float", minimum=0.0)),
        "checks": {
            "truncation_tol": Field("float", required=False, default=0.05,
                                    minimum=0.0, exclusive_min=True),
            "window": Field("float", required=False, default=15.0,
                            minimum=0.0, exclusive_min=True),
            "samples": Field("int", required=False, default=1000, minimum=16),
        },
        "output": _output_section(required=False),
    },
}

# blp-temp scans bath temperature, so the bath section must not pin one
assert "temperature_k" not in SCHEMAS["blp-temp"]["bath"]


# --- resolved config ---

@dataclass
class ResolvedConfig:
    """Typed values for one experiment, every default already filled in."""

    experiment: str
    values: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key, fallback=None):
        return self.values.get(section, {}).get(key, fallback)

    def canonical_text(self):
        """INI text that parses back to exactly these values."""
        out = io.StringIO()
        out.write("# experiment: %s\n" % self.experiment)
        schema = SCHEMAS[self.experiment]
        for section in schema:
            out.write("\n[%s]\n" % section)
            for key in schema[section]:
                if key in self.values[section]:
                    out.write("%s = %s\n" % (key, _fmt(self.values[section][key])))
        return out.getvalue()


def parse_config(text, experiment, overrides=()):
    """Strict-parse INI text against the experiment's schema.

    overrides are "section.key=value" strings applied on top of the file
    before validation, so an override can hit any schema key but cannot
    smuggle in an unknown one.
    """
    if experiment not in SCHEMAS:
        raise ConfigError("unknown experiment %r; pick one of %s"
                          % (experiment, ", ".join(EXPERIMENTS)))
    schema = SCHEMAS[experiment]
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError("config does not parse: %s" % err) from None

    for item in overrides:
        if "=" not in item:
            raise ConfigError("override %r is not section.key=value" % item)
        target, value = item.split("=", 1)
        if "." not in target:
            raise ConfigError("override %r is not section.key=value" % item)
        sec, key = target.split(".", 1)
        sec, key = sec.strip(), key.strip()
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key, value.strip())

    for sec in cp.sections():
        if sec not in schema:
            raise ConfigError("unknown section [%s] for experiment %s"
                              % (sec, experiment))
        for key in cp[sec]:
            if key not in schema[sec]:
                raise ConfigError("unknown key %s.%s for experiment %s"
                                  % (sec, key, experiment))

    resolved = {}
    for sec, fields in schema.items():
        resolved[sec] = {}
        for key, spec in fields.items():
            name = "%s.%s" % (sec, key)
            if cp.has_option(sec, key):
                resolved[sec][key] = _convert(name, spec, cp.get(sec, key))
            elif spec.required:
                raise ConfigError("missing required key %s (no silent "
                                  "defaults for physical parameters)" % name)
            elif spec.default is not None:
                resolved[sec][key] = spec.default

    cfg = ResolvedConfig(experiment, resolved)
    _cross_checks(cfg)
    return cfg


def load_config(path, experiment, overrides=()):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError("cannot read config %s: %s" % (path, err)) from None
    return parse_config(text, experiment, overrides)


def _cross_checks(cfg):
    v = cfg.values
    if "initial" in v and "mode" in v:
        need = v["initial"]["manifold_n"] + 1
        if need > v["mode"]["n_max"]:
            raise ConfigError("initial.manifold_n = %d needs n_max >= %d"
                              % (v["initial"]["manifold_n"], need))
    if cfg.experiment == "nd-bz":
        if v["grid"]["bz_max_t"] <= v["grid"]["bz_min_t"]:
            raise ConfigError("grid.bz_max_t must exceed grid.bz_min_t")
    if cfg.experiment == "blp-temp":
        if v["grid"]["t_max_k"] <= v["grid"]["t_min_k"]:
            raise ConfigError("grid.t_max_k must exceed grid.t_min_k")
    if cfg.experiment == "meanfield-scaling":
        if v["scan"]["alpha_max"] <= v["scan"]["alpha_min"]:
            raise ConfigError("scan.alpha_max must exceed scan.alpha_min")
        if not v["scan"]["t_list_k"]:
            raise ConfigError("scan.t_list_k must name at least one temperature")
    if cfg.experiment == "spectrum-map":
        pair = v["grid"]["pair"]
        dim = 4 * (v["mode"]["n_max"] + 1)
        if len(pair) != 2 or not 1 <= pair[0] < pair[1] <= dim:
            raise ConfigError("grid.pair must be two ascending 1-based levels "
                              "within %d" % dim)
    if "bath" in v:
        bath = v["bath"]
        if bath["omega_max_ghz"] and bath["omega_max_ghz"] <= bath["center_ghz"]:
            raise ConfigError("bath.omega_max_ghz must exceed bath.center_ghz")


# --- builders: resolved values to physics objects ---

def build_siv_params(cfg):
    from .siv import SivParams
    s = cfg["siv"]
    b = (s.get("bx_t", 0.0), 0.0, s.get("bz_t", 0.0))
    return SivParams(s["lam_ghz"] * GHZ, s["gamma_x_ghz"] * GHZ,
                     s["gamma_y_ghz"] * GHZ, b, s["ham_factor"])


def build_mode_params(cfg, g1=None):
    from .siv import PhononModeParams
    m = cfg["mode"]
    g1 = m.get("g1_ghz", 0.0) * GHZ if g1 is None else g1
    return PhononModeParams(
        omega_ph=m["omega_ph_ghz"] * GHZ,
        g1=g1,
        g2=m.get("g2_ghz", 0.0) * GHZ,
        q=m.get("quality_factor", 1e5),
        temperature=m.get("temperature_k", 0.0),
        n_max=m["n_max"])


def build_bath_params(cfg, temperature=0.0):
    from .bath import BathParams
    b = cfg["bath"]
    center = b["center_ghz"] * GHZ
    return BathParams(
        j0=b["j0_scaled"] / center,
        width=b["width_ghz"] * GHZ,
        center=center,
        temperature=b.get("temperature_k", temperature),
        omega_max=b["omega_max_ghz"] * GHZ,
        cross_mode=b["cross_mode"])

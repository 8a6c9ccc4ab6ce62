"""Run configuration: a key-sectioned INI file mapped onto validated model
objects.  Loading checks the structural assumptions of the model (A1 initial
data, A2 flux, A3 noise coefficient, A4 jump measure) and rejects a config
naming the violated assumption.  Serialization is canonical, so
serialize(parse(file)) is idempotent.
"""

from __future__ import annotations

import configparser
import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .control import constant_target, psi_l2, psi_zero, sine_basis
from .grid import FREE_BOUNDARY, Field, Grid
from .levy import LevyModel, eta_linear, eta_sine, eta_zero
from .scheme import SchemeConfig, linear_flux, sine_flux, zero_flux


class ConfigError(ValueError):
    """Invalid run configuration; message names the violated assumption
    when one of A1..A4 fails."""


_DEFAULTS = {
    "grid": {"dim": "1", "n_cells": "16"},
    "scheme": {
        "p": "3.0",
        "dt": "0.03125",
        "n_steps": "16",
        "newton_tol": "1e-10",
        "newton_max_iters": "50",
        "control_projection": "clamp_boundary",
        "flux": "zero",
        "flux_coefs": "",
    },
    "levy": {
        "measure": "point:1.0@1.0",
        "eta": "linear:0.5",
        "lambda_star": "0.5",
        "eps": "0.001",
        "z_max": "1.0",
    },
    "initial": {"u0": "zero", "basis": "sine:2", "control_coeffs": ""},
    "cost": {"u_tar": "zero", "psi": "zero"},
    "run": {"n_paths": "50", "seed": "0", "out_dir": "out"},
    "converge": {"sweep": "dt", "values": "", "probe": "self", "ref_refine": "8"},
}

_SECTION_ORDER = list(_DEFAULTS)


@dataclass
class RunConfig:
    """Typed view of a parsed config; build_* methods construct the domain
    objects and perform assumption checks."""

    raw: dict = field(default_factory=dict)

    def get(self, section: str, key: str) -> str:
        try:
            return self.raw[section][key]
        except KeyError:
            raise ConfigError(f"missing config key [{section}] {key}")

    def _float(self, section, key):
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number")

    def _int(self, section, key):
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer")

    # -- builders ----------------------------------------------------------

    def build_grid(self) -> Grid:
        try:
            return Grid(self._int("grid", "dim"), self._int("grid", "n_cells"))
        except ValueError as err:
            raise ConfigError(str(err))

    def build_flux(self, dim: int):
        kind = self.get("scheme", "flux")
        coefs = _parse_floats(self.get("scheme", "flux_coefs"))
        if kind == "zero":
            flux = zero_flux(dim)
        elif kind in ("linear", "sine"):
            if len(coefs) != dim:
                raise ConfigError(
                    f"[scheme] flux_coefs needs {dim} values for flux = {kind}"
                )
            flux = linear_flux(coefs) if kind == "linear" else sine_flux(coefs)
        else:
            raise ConfigError(f"unknown flux kind {kind!r}")
        try:
            return flux.validate()
        except ValueError as err:
            raise ConfigError(str(err))

    def build_scheme(self, dim: int) -> SchemeConfig:
        p = self._float("scheme", "p")
        if p <= 2:
            raise ConfigError(f"scheme requires p > 2, got {p}")
        try:
            return SchemeConfig(
                p=p,
                dt=self._float("scheme", "dt"),
                n_steps=self._int("scheme", "n_steps"),
                flux=self.build_flux(dim),
                newton_tol=self._float("scheme", "newton_tol"),
                newton_max_iters=self._int("scheme", "newton_max_iters"),
                control_projection=self.get("scheme", "control_projection"),
            )
        except ValueError as err:
            raise ConfigError(str(err))

    def build_levy(self) -> LevyModel:
        lam_star = self._float("levy", "lambda_star")
        eta_spec = self.get("levy", "eta")
        kind, _, arg = eta_spec.partition(":")
        if kind == "zero":
            eta = eta_zero()
        elif kind == "linear":
            eta = eta_linear(float(arg or lam_star))
        elif kind == "sine":
            eta = eta_sine(float(arg or lam_star))
        else:
            raise ConfigError(f"unknown eta kind {kind!r}")

        measure = self.get("levy", "measure")
        point_masses, density = (), None
        mkind, _, marg = measure.partition(":")
        if mkind == "none":
            pass
        elif mkind == "point":
            try:
                point_masses = tuple(
                    (float(z), float(lam))
                    for z, lam in (pair.split("@") for pair in marg.split(","))
                )
            except ValueError:
                raise ConfigError(
                    "point measure must look like point:z@mass[,z@mass...]"
                )
            if any(lam < 0 for _, lam in point_masses):
                raise ConfigError("A4 violated: point masses must be nonnegative")
        elif mkind == "density":
            if marg == "invsq":
                density = lambda z: abs(z) ** -2 if z != 0 else 0.0
            elif marg == "uniform":
                density = lambda z: 1.0
            else:
                raise ConfigError(f"unknown density {marg!r}")
        else:
            raise ConfigError(f"unknown measure kind {mkind!r}")

        model = LevyModel(
            eta=eta,
            lambda_star=lam_star,
            point_masses=point_masses,
            density=density,
            eps=self._float("levy", "eps"),
            z_max=self._float("levy", "z_max"),
        )
        try:
            return model.validate()
        except ValueError as err:
            raise ConfigError(str(err))

    def build_initial(self, grid: Grid) -> Field:
        u0 = _parse_field(self.get("initial", "u0"), grid, "zero_boundary")
        if not np.all(np.isfinite(u0.values)):
            raise ConfigError("A1 violated: initial data must be finite")
        return u0

    def build_basis(self, grid: Grid) -> list:
        spec = self.get("initial", "basis")
        kind, _, arg = spec.partition(":")
        if kind == "none":
            return []
        if kind == "sine":
            return sine_basis(grid, int(arg or 2))
        raise ConfigError(f"unknown control basis {kind!r}")

    def build_control(self, grid: Grid) -> Field:
        basis = self.build_basis(grid)
        coefs = _parse_floats(self.get("initial", "control_coeffs"))
        if not basis or not coefs:
            return Field.zeros(grid, FREE_BOUNDARY)
        if len(coefs) != len(basis):
            raise ConfigError(
                f"control_coeffs has {len(coefs)} entries, basis has {len(basis)}"
            )
        vals = np.zeros(grid.node_shape)
        for c, phi in zip(coefs, basis):
            vals = vals + c * phi.values
        return Field(grid, vals, FREE_BOUNDARY)

    def build_cost(self, grid: Grid, n_steps: int):
        from .control import CostSpec

        tar = _parse_field(self.get("cost", "u_tar"), grid, "zero_boundary")
        psi_spec = self.get("cost", "psi")
        kind, _, arg = psi_spec.partition(":")
        if kind == "zero":
            fn, lip = psi_zero()
        elif kind == "l2":
            fn, lip = psi_l2()
        elif kind == "l2_clip":
            fn, lip = psi_l2(cap=float(arg or 1.0))
        else:
            raise ConfigError(f"unknown psi kind {kind!r}")
        return CostSpec(
            u_tar=constant_target(grid, n_steps, tar), psi=fn, psi_lipschitz=lip
        )

    # -- run section -------------------------------------------------------

    @property
    def n_paths(self) -> int:
        return self._int("run", "n_paths")

    @property
    def seed(self) -> int:
        return self._int("run", "seed")

    @property
    def out_dir(self) -> str:
        return self.get("run", "out_dir")

    def converge_values(self) -> list:
        return _parse_floats(self.get("converge", "values"))

    def validate(self) -> "RunConfig":
        grid = self.build_grid()
        self.build_scheme(grid.dim)
        self.build_levy()
        self.build_initial(grid)
        self.build_control(grid)
        if self.n_paths < 1:
            raise ConfigError("[run] n_paths must be >= 1")
        return self


def _parse_floats(text: str) -> list:
    text = text.strip()
    if not text:
        return []
    try:
        return [float(tok) for tok in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected a comma list of numbers, got {text!r}")


def _parse_field(preset: str, grid: Grid, tag: str) -> Field:
    kind, _, arg = preset.partition(":")
    if kind == "zero":
        return Field.zeros(grid, tag)
    if kind == "sine":
        params = _parse_kv(arg)
        amp = float(params.get("amplitude", 1.0))
        mode = int(params.get("mode", 1))
        if grid.dim == 1:
            fn = lambda x: amp * np.sin(mode * np.pi * x)
        else:
            fn = lambda x, y: amp * np.sin(mode * np.pi * x) * np.sin(mode * np.pi * y)
        return Field.from_function(grid, fn, tag)
    if kind == "constant":
        vals = np.full(grid.node_shape, float(arg or 1.0))
        if tag == "zero_boundary":
            flat = vals.ravel()
            flat[grid.boundary_nodes] = 0.0
            vals = flat.reshape(grid.node_shape)
        return Field(grid, vals, tag)
    if kind == "file":
        return _load_nodal_csv(arg, grid, tag)
    raise ConfigError(f"unknown field preset {preset!r}")


def _parse_kv(arg: str) -> dict:
    out = {}
    if not arg:
        return out
    for tok in arg.split(","):
        k, _, v = tok.partition("=")
        if not v:
            raise ConfigError(f"expected key=value, got {tok!r}")
        out[k.strip()] = v.strip()
    return out


def _load_nodal_csv(path: str, grid: Grid, tag: str) -> Field:
    """Nodal values, one per row in C order, column header `value`."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        vals = np.array([float(r["value"]) for r in rows])
    except (OSError, KeyError, ValueError) as err:
        raise ConfigError(f"cannot read nodal CSV {path!r}: {err}")
    if vals.size != grid.n_nodes:
        raise ConfigError(
            f"A1 violated: nodal file has {vals.size} values, grid has {grid.n_nodes} nodes"
        )
    if not np.all(np.isfinite(vals)):
        raise ConfigError("A1 violated: initial data must be finite")
    if tag == "zero_boundary":
        vals[grid.boundary_nodes] = 0.0
    return Field(grid, vals.reshape(grid.node_shape), tag)


# ---------------------------------------------------------------------------
# parse / serialize


def parse_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path!r}: {err}")
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}")
    return config_from_parser(parser)


def config_from_parser(parser: configparser.ConfigParser) -> RunConfig:
    raw = {}
    for section, defaults in _DEFAULTS.items():
        raw[section] = dict(defaults)
        if parser.has_section(section):
            for key, val in parser.items(section):
                if key not in defaults:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                raw[section][key] = val.strip()
    for section in parser.sections():
        if section not in _DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
    return RunConfig(raw=raw)


def serialize_config(cfg: RunConfig) -> str:
    out = io.StringIO()
    for section in _SECTION_ORDER:
        out.write(f"[{section}]\n")
        for key in _DEFAULTS[section]:
            out.write(f"{key} = {cfg.raw[section][key]}\n")
        out.write("\n")
    return out.getvalue()


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}")
    return config_from_parser(parser)

"""Configuration objects and the key=value config-file loader.

The file format is INI-style: section headers name the module a key belongs
to (``[channel]``, ``[scheduler]``, ``[fedlearn]``, ...) and keys match the
dataclass field names exactly. Sections are for readability only; a key is
resolved by name regardless of the section it sits in, except for the
``[harness]`` section which is handed back untouched for sweep settings.
"""

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields, replace

from .numerics import ValidationError

__all__ = [
    "SPEED_OF_LIGHT",
    "SystemConfig",
    "TrainConfig",
    "load_config",
    "apply_overrides",
    "parse_assignments",
    "describe_defaults",
]

SPEED_OF_LIGHT = 2.998e8
NOISE_PSD = 9.8e-18  # W/Hz
DEFAULT_BANDWIDTH = 10e6
DEFAULT_NOISE = NOISE_PSD * DEFAULT_BANDWIDTH


@dataclass(frozen=True)
class SystemConfig:
    """Scalar parameters of the simulated network.

    Powers are in W, distances in m, angles in rad. ``gamma`` is the
    downlink SNR-scaling floor, ``Gamma0`` the CRB threshold and ``eps0``
    the aggregation-error threshold.
    """

    N: int = 8
    K: int = 20
    L: int = 32
    M: int = 128
    P_d: float = 1.0
    P_u: float = 1e-3
    sigma2_ps: float = DEFAULT_NOISE
    sigma2_k: float = DEFAULT_NOISE
    gamma: float = 5e-12
    Gamma0: float = 1e-9
    eps0: float = 200.0
    delta: float = 0.1
    tau0: float = 0.5
    carrier_hz: float = 5e9
    bandwidth_hz: float = DEFAULT_BANDWIDTH
    D_in: float = 200.0
    D_out: float = 500.0
    eps_c: float = 2.5
    eps_t: float = 4.5
    sigma_rcs: float = 0.1
    d_target: float = 50.0
    theta_target: float = math.pi / 6
    antenna_spacing: float = 0.5
    seed: int = 0
    # echo / uplink activity over a block, in [0, 1]; 1 = always present
    beta_s: float = 1.0
    beta_c: float = 1.0
    alpha_random_phase: bool = False
    # "average" (printed problem) or "min" (per-device floor)
    snr_floor: str = "average"

    def __post_init__(self):
        bad = self.invalid_keys()
        if bad:
            raise ValidationError("invalid config values: " + ", ".join(bad))

    def invalid_keys(self):
        bad = []
        for name in ("N", "K", "L", "M"):
            if getattr(self, name) < 1:
                bad.append(name)
        if self.L < self.N:
            bad.append("L")
        if self.M < self.L:
            bad.append("M")
        for name in ("P_d", "P_u", "sigma2_ps", "sigma2_k", "Gamma0", "eps0",
                     "carrier_hz", "bandwidth_hz", "D_in", "D_out", "sigma_rcs",
                     "d_target", "antenna_spacing"):
            value = getattr(self, name)
            if not value > 0 or math.isnan(value):
                bad.append(name)
        if self.gamma < 0:
            bad.append("gamma")
        for name in ("delta", "tau0", "beta_s", "beta_c"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                bad.append(name)
        if self.D_in >= self.D_out and "D_in" not in bad:
            bad.append("D_in")
        if self.snr_floor not in ("average", "min"):
            bad.append("snr_floor")
        return bad

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def noise_floor(self):
        """Thermal noise ``N0 * B`` implied by the configured bandwidth."""
        return NOISE_PSD * self.bandwidth_hz


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale federated learning task (softmax regression, synthetic data)."""

    rounds: int = 50
    local_steps: int = 5
    lr: float = 0.5
    batch: int = 0  # 0 = full local batch
    reg: float = 1e-2
    alpha_dir: float = 1.0
    n_samples: int = 2000
    n_features: int = 10
    n_classes: int = 2
    class_sep: float = 1.8
    test_fraction: float = 0.17
    # "on": estimate and cancel the echo; "off": no cancellation; "none": no echo;
    # "true": cancel with the exact response (reference runs)
    sensing: str = "on"

    def __post_init__(self):
        bad = []
        for name in ("rounds", "local_steps", "n_samples", "n_features"):
            if getattr(self, name) < 1:
                bad.append(name)
        if self.n_classes < 2:
            bad.append("n_classes")
        if self.batch < 0:
            bad.append("batch")
        if not self.lr >= 0:
            bad.append("lr")
        if not self.reg > 0:
            bad.append("reg")
        if not self.alpha_dir > 0:
            bad.append("alpha_dir")
        if not 0.0 <= self.test_fraction < 1.0:
            bad.append("test_fraction")
        if self.sensing not in ("on", "off", "none", "true"):
            bad.append("sensing")
        if bad:
            raise ValidationError("invalid config values: " + ", ".join(bad))

    @property
    def model_dim(self):
        return self.n_features * self.n_classes


_SYSTEM_FIELDS = {f.name: f for f in fields(SystemConfig)}
_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _coerce(f: dataclasses.Field, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
    if kind == "bool":
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)
    if kind == "int":
        return int(float(text)) if "e" in text.lower() else int(text)
    if kind == "float":
        return float(text)
    return text


def apply_overrides(system: SystemConfig, train: TrainConfig, values: dict):
    """Return copies of ``system``/``train`` with ``values`` applied by key name.

    Unknown keys and values that fail to parse or validate are collected and
    reported together in one ``ValidationError``.
    """
    sys_kw, train_kw, bad = {}, {}, []
    for key, raw in values.items():
        if key in _SYSTEM_FIELDS:
            target, spec = sys_kw, _SYSTEM_FIELDS[key]
        elif key in _TRAIN_FIELDS:
            target, spec = train_kw, _TRAIN_FIELDS[key]
        else:
            bad.append(f"{key} (unknown key)")
            continue
        try:
            target[key] = _coerce(spec, raw)
        except ValueError:
            bad.append(f"{key} (cannot parse {raw!r})")
    if bad:
        raise ValidationError("invalid config keys: " + ", ".join(bad))
    new_system = _replace_checked(system, sys_kw)
    new_train = _replace_checked(train, train_kw)
    return new_system, new_train


def _replace_checked(obj, kw):
    if not kw:
        return obj
    return replace(obj, **kw)


def parse_assignments(items):
    """Parse ``["key=value", ...]`` into a dict, rejecting malformed entries."""
    out, bad = {}, []
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            bad.append(item)
            continue
        out[key.strip()] = value.strip()
    if bad:
        raise ValidationError("malformed --set entries (expected key=value): " + ", ".join(bad))
    return out


def load_config(path=None, overrides=None):
    """Load ``(SystemConfig, TrainConfig, harness_section)`` from an INI file.

    ``overrides`` (a mapping of key to string value) is applied after the
    file, so command-line ``--set`` wins.
    """
    values, harness = {}, {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case: N, P_d, Gamma0 ...
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        for section in parser.sections():
            target = harness if section == "harness" else values
            target.update(parser[section])
    harness_keys = {"sweep", "grid", "trials", "policies", "out", "train", "workers", "sensing_trials"}
    for key, value in (overrides or {}).items():
        if key in harness_keys:
            harness[key] = value
        else:
            values[key] = value
    system, train = apply_overrides(SystemConfig(), TrainConfig(), values)
    return system, train, harness


def describe_defaults():
    """One line per config key with its default, for ``--help`` output."""
    lines = ["[channel]/[sensing]/[aggregation]/[scheduler] keys:"]
    defaults = SystemConfig()
    for name in _SYSTEM_FIELDS:
        lines.append(f"  {name} = {getattr(defaults, name)}")
    lines.append("[fedlearn] keys:")
    tdefaults = TrainConfig()
    for name in _TRAIN_FIELDS:
        lines.append(f"  {name} = {getattr(tdefaults, name)}")
    return "\n".join(lines)

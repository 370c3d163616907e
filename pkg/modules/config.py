import copy
import os

import toml
from rich.console import Console
from toml.decoder import TomlDecodeError

from atomic_update import atomic_write_text
from errors import ConfigError

console = Console(stderr=True)

SEED_ENV_VAR = "VRL_SEED"

DEFAULT_SETTINGS = {
    "settings": {"logging_level": "WARNING"},
    "paths": {},
}


class PickleableTomlDecoder(toml.TomlDecoder):
    def get_empty_inline_table(self):
        return self.get_empty_table()


def parse_override(assignment):
    """Split 'model.attention.k=32' into (['model', 'attention', 'k'], 32)."""
    if "=" not in assignment:
        raise ConfigError(f"Override '{assignment}' must look like section.key=value.")
    dotted, raw = assignment.split("=", 1)
    path = [part.strip() for part in dotted.strip().split(".") if part.strip()]
    if len(path) < 2:
        raise ConfigError(f"Override '{assignment}' needs a section and a key.")
    try:
        value = toml.loads(f"value = {raw.strip()}")["value"]
    except TomlDecodeError:
        value = raw.strip()
    return path, value


def deep_merge(base, update):
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class Config:
    def __init__(self, file_path=None, overrides=None, environ=None):
        self.file_path = file_path
        self.environ = os.environ if environ is None else environ
        self.settings = deep_merge(DEFAULT_SETTINGS, self._read_config())
        for assignment in overrides or []:
            path, value = parse_override(assignment)
            self.set(path, value)
        self._apply_seed_fallback()
        self.debug_level = self.settings["settings"].get("logging_level", "WARNING")

    def _read_config(self):
        """Read the configuration file"""
        if self.file_path is None:
            return {}
        try:
            return toml.load(self.file_path, decoder=PickleableTomlDecoder())
        except TomlDecodeError as e:
            raise ConfigError(f"Error decoding TOML file '{self.file_path}': {e}")
        except FileNotFoundError:
            raise FileNotFoundError(f"Configuration file '{self.file_path}' not found.")

    def _apply_seed_fallback(self):
        raw_seed = self.environ.get(SEED_ENV_VAR)
        if raw_seed is None:
            return
        try:
            seed = int(raw_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{raw_seed}'.")
        for section in ("model", "train"):
            self.settings.setdefault(section, {}).setdefault("seed", seed)

    def set(self, path, value):
        node = self.settings
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"'{'.'.join(path)}' overrides a non-table value.")
            node = child
        node[path[-1]] = value

    def get(self, section, key=None, default=None):
        node = self.settings
        try:
            for part in section.split("."):
                node = node[part]
            if key:
                return node[key]
            return node
        except (KeyError, TypeError):
            if default is not None:
                return default
            raise KeyError(f"Section '{section}' or key '{key}' not found in configuration.")

    def section(self, name):
        """Return a copy of a table, or an empty dict if it is absent."""
        try:
            node = self.get(name)
        except KeyError:
            return {}
        if not isinstance(node, dict):
            raise ConfigError(f"'{name}' must be a table.")
        return copy.deepcopy(node)

    def print_config_recap(self, resolved):
        console.print("\n[bold]Current Settings:[/bold]")
        model = resolved.get("model", {})
        attention = model.get("attention", {})
        train = resolved.get("train", {})
        console.print(f" - Task: [blue]{model.get('task')}[/blue]")
        console.print(
            f" - Alignment: [blue]{model.get('align_variant')}[/blue] x{model.get('align_blocks')}"
        )
        variant = attention.get("variant")
        color = "red" if variant == "None" else "green"
        console.print(f" - Attention: [{color}]{variant}[/{color}] (k={attention.get('k')})")
        console.print(
            f" - Reconstruction: [blue]{model.get('recon_mode')}[/blue] depth {model.get('recon_depth')}"
        )
        if train:
            console.print(
                f" - Iterations: [blue]{train.get('iterations')}[/blue], batch [blue]{train.get('batch_size')}[/blue]\n"
            )

    @staticmethod
    def dump(resolved, file_path):
        """Persist a fully resolved configuration as TOML."""
        atomic_write_text(toml.dumps(resolved), file_path)

"""Python access to the simulator, metrics and scripted baselines."""

import json as _json

from . import _core
from ._core import Env as _Env, World, load_world, label_names, InvariantError, ParseError, EpisodeError

__all__ = [
    "World", "Env", "generate_world", "load_world", "label_names",
    "compute_spl", "success_rate", "evaluate", "default_episode_config",
    "InvariantError", "ParseError", "EpisodeError",
]


def _dump(cfg):
    if cfg is None:
        return ""
    return cfg if isinstance(cfg, str) else _json.dumps(cfg)


def generate_world(seed, name="", config=None):
    return _core.generate_world(seed, name, _dump(config))


def default_episode_config():
    return _json.loads(_core.default_episode_config())


class Env(_Env):
    def __init__(self, world, config=None):
        super().__init__(world, _dump(config))


def compute_spl(records):
    """records: iterable of dicts with success, optimal, path_length (plus world and goal)."""
    return _core.compute_spl(_json.dumps([_record(r) for r in records]))


def success_rate(records):
    return _core.success_rate(_json.dumps([_record(r) for r in records]))


def _record(r):
    out = {"world": "", "goal": "bed"}
    out.update(r)
    return out


def evaluate(policy, worlds, suite=None):
    """Runs a scripted policy ("roomba", "tgt" or "still") and returns the results document."""
    return _json.loads(_core.evaluate(policy, list(worlds), _dump(suite)))

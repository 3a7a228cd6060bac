import pytest

from vcl.config import parse_run_config


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


@pytest.fixture
def tiny_cfg():
    """Factory for fast run configs; overrides merge into a 48-row base."""

    def make(**over):
        base = {"steps": 4, "batch_n": 16, "seed": 0, "data": {"m": 48}}
        return parse_run_config(_merge(base, over))

    return make

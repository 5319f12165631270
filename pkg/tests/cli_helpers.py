"""Stand-ins for the sweep worker; importable from worker processes."""

import time

from magsplit.model import ModelConfig


def fake_point(config_json, gs_json, levels):
    cfg = ModelConfig.from_json(config_json)
    # later points finish first, so order must come from the config
    time.sleep(0.05 * (20 - cfg.lam))
    rho = 10.0 ** (-cfg.lam)
    return {"lambda": cfg.lam, "dist": cfg.separation, "rho_abs": rho,
            "gap_planar": 2 * rho, "gap_reduction": 2 * rho, "gap_extrapolated": 2 * rho,
            "ratio": 1.0 + 0.1 / cfg.lam, "max_abs_f": 1.0 / cfg.lam ** 3,
            "max_abs_g": 1.0 / cfg.lam ** 4, "resolvent_probe": 0.05,
            "resolved": True, "gap_resolved": True}

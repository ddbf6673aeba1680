"""Dry-run of acceptance criteria 7-9 measurements (dev aid, not shipped)."""
import json
import sys
import time
from dataclasses import replace

import numpy as np
import torch

torch.set_num_threads(2)

from convrec.catalog import SyntheticSpec
from convrec.harness import (DqnPolicy, MaxEntropyPolicy, build_world,
                             desk_scale_config, evaluate, simulation_pairs,
                             split_pairs, train)
from convrec.simulator import MODE_HARD

SEEDS = tuple(int(s) for s in sys.argv[1:]) or (0, 1, 2)
spec = SyntheticSpec(n_users=200, n_items=500, n_attributes=50, n_types=8, seed=1)
out = {}
t0 = time.time()

for seed in SEEDS:
    cfg = desk_scale_config(synthetic=spec, episodes=2000, eval_every=500,
                            eval_episodes=100, seed=seed, pretrain_epochs=50)
    catalog, table = build_world(cfg)
    pairs = split_pairs(simulation_pairs(catalog, 2, seed=cfg.seed), seed=cfg.seed)

    res = train(cfg, catalog, table, pairs)
    m_full, _ = evaluate(DqnPolicy(res.agent), catalog, pairs["test"], cfg, 500, seed=seed + 999)
    m_me, _ = evaluate(MaxEntropyPolicy(n_rec=cfg.n_top, k_ask=cfg.k_ask, seed=seed),
                       catalog, pairs["test"], cfg, 500, seed=seed + 999)

    cfg_v8 = replace(cfg, vague_ratio=0.8)
    m_v8, _ = evaluate(DqnPolicy(res.agent), catalog, pairs["test"], cfg_v8, 500, seed=seed + 999)
    cfg_h8 = replace(cfg, vague_ratio=0.8, mode=MODE_HARD)
    m_h8, r_h8 = evaluate(DqnPolicy(res.agent), catalog, pairs["test"], cfg_h8, 500, seed=seed + 999)

    abl_cfg = replace(cfg, use=replace(cfg.use, use_personalized=False))
    res_abl = train(abl_cfg, catalog, table, pairs)
    m_abl, _ = evaluate(DqnPolicy(res_abl.agent), catalog, pairs["test"], abl_cfg, 500, seed=seed + 999)

    out[seed] = {
        "full_sr": m_full.sr, "full_at": m_full.at,
        "maxent_sr": m_me.sr, "maxent_at": m_me.at,
        "v8_sr": m_v8.sr, "hard8_sr": m_h8.sr,
        "soft_filtered": m_full.target_filtered_fraction,
        "hard_filtered": m_h8.target_filtered_fraction,
        "ablated_sr": m_abl.sr,
        "eval_history": res.eval_history,
        "ablated_history": res_abl.eval_history,
        "elapsed_s": round(time.time() - t0),
    }
    print(seed, json.dumps(out[seed]), flush=True)

mean = lambda key: float(np.mean([out[s][key] for s in SEEDS]))
print("\n=== summary ===")
print(f"crit7 SR: full {mean('full_sr'):.3f} vs maxent {mean('maxent_sr'):.3f} "
      f"(need >= +0.05) | AT: {mean('full_at'):.2f} vs {mean('maxent_at'):.2f} (need <= -0.5)")
print(f"crit8 SR: v0.5 {mean('full_sr'):.3f}, v0.8 {mean('v8_sr'):.3f} vs hard0.8 "
      f"{mean('hard8_sr'):.3f}; filtered soft {mean('soft_filtered'):.3f} hard {mean('hard_filtered'):.3f}")
print(f"crit9 SR: full {mean('full_sr'):.3f} vs no-personalized {mean('ablated_sr'):.3f} (need strict <)")
print(f"total {round(time.time()-t0)}s")

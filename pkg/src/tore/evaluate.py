"""Evaluation: pose/shape metrics per sample, CSV with a MEAN row."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .container import load_container
from .mesh import metrics
from .train import forward_sample, load_checkpoint

EVAL_CSV_COLUMNS = ["sample", "MPJPE", "PAMPJPE", "MPVE"]
_SCALE = 1000.0  # model units reported x1000


def evaluate_arrays(model, stub, arrays: dict[str, np.ndarray],
                    gt_as_prediction: bool = False) -> list[dict[str, float]]:
    rows = []
    for i in range(arrays["render"].shape[0]):
        if gt_as_prediction:
            pred_j = arrays["joints3d"][i]
            pred_v = arrays["verts_high"][i]
        else:
            out = forward_sample(model, stub, arrays["render"][i], train=False)
            pred_j = out.joints_from_mesh.data.astype(np.float64)
            pred_v = out.verts_high.data.astype(np.float64)
        rows.append(metrics(pred_j, pred_v, arrays["joints3d"][i].astype(np.float64),
                            arrays["verts_high"][i].astype(np.float64)))
    return rows


def evaluate(ckpt_path, data_path, out_csv=None, gt_as_prediction: bool = False) -> dict:
    """Eval-mode forward over a dataset container; metrics are x1000.

    The checkpoint embeds its run config; the dataset must have been built
    against the same template resolution.
    """
    model, stub, run_cfg = load_checkpoint(ckpt_path)
    arrays, meta = load_container(data_path)
    if int(meta["v_low"]) != run_cfg.model.v_low:
        raise ValueError(
            f"dataset template ({meta['v_low']} coarse vertices) does not match "
            f"checkpoint config ({run_cfg.model.v_low})")
    rows = evaluate_arrays(model, stub, arrays, gt_as_prediction)
    lines = [",".join(EVAL_CSV_COLUMNS)]
    for i, row in enumerate(rows):
        lines.append(f"{i},{row['MPJPE'] * _SCALE:.6f},{row['PAMPJPE'] * _SCALE:.6f},"
                     f"{row['MPVE'] * _SCALE:.6f}")
    means = {k: float(np.mean([r[k] for r in rows])) for k in ("MPJPE", "PAMPJPE", "MPVE")}
    lines.append(f"MEAN,{means['MPJPE'] * _SCALE:.6f},{means['PAMPJPE'] * _SCALE:.6f},"
                 f"{means['MPVE'] * _SCALE:.6f}")
    text = "\n".join(lines) + "\n"
    if out_csv is not None:
        Path(out_csv).write_text(text)
    return {"rows": rows, "means": means, "csv": text}

"""Binary checkpoints: every array stored exactly in an uncompressed npz container."""

import json

import numpy as np

from .errors import IncompatibleCheckpoint
from .evalcal import Calibration
from .kernels import ArdParams
from .variational import GwiModel

FORMAT_VERSION = 1


def save_checkpoint(path, model, calibration, meta=None):
    """Write model, calibration and JSON-serialisable ``meta`` to ``path``."""
    arrays = {
        "prior_log_sf": np.array(model.prior.log_sf),
        "prior_log_alpha": model.prior.log_alpha,
        "sigma2": np.array(model.sigma2),
        "Z": model.Z,
        "alpha_t": np.array(calibration.alpha_t),
        "input_shift": model.input_shift,
        "input_scale": model.input_scale,
    }
    if calibration.alpha_class is not None:
        arrays["alpha_class"] = calibration.alpha_class
    for k, v in model.params.items():
        arrays["p_" + k] = v
    header = {"format": FORMAT_VERSION, "task": model.task, "variant": model.variant, "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Return ``(model, calibration, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise IncompatibleCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    if "header" not in arrays:
        raise IncompatibleCheckpoint(f"{path} has no header record")
    header = json.loads(arrays.pop("header").tobytes().decode("utf-8"))
    if header.get("format") != FORMAT_VERSION:
        raise IncompatibleCheckpoint(f"unsupported checkpoint format {header.get('format')}")
    prior = ArdParams(float(arrays["prior_log_sf"]), arrays["prior_log_alpha"])
    params = {k[2:]: v for k, v in arrays.items() if k.startswith("p_")}
    model = GwiModel(header["task"], header["variant"], prior, float(arrays["sigma2"]), arrays["Z"], params,
                     arrays["input_shift"], arrays["input_scale"])
    calibration = Calibration(float(arrays["alpha_t"]), arrays.get("alpha_class"))
    return model, calibration, header["meta"]

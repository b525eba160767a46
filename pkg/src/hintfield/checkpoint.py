"""Binary checkpoints: bit-exact round-trip of fields, optimizer and poses.

Layout: magic ``HFLD``, u32 format version, u64 JSON header length, JSON
header, then the raw little-endian array payloads back to back. The header
carries the network specs, the train config, scalar state (iteration, Adam
step counters) and a directory of (name, dtype, shape, offset) entries.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import numerics as nm
from .fields import DensityField, RadianceField, SampleConfig
from .trainer import TrainConfig, TrainState

MAGIC = b"HFLD"
FORMAT_VERSION = 1


def _config_to_json(cfg: TrainConfig):
    d = dataclasses.asdict(cfg)
    d["sample"] = dataclasses.asdict(cfg.sample)
    return d


def _config_from_json(d):
    d = dict(d)
    d["sample"] = SampleConfig(**d["sample"])
    return TrainConfig(**d)


def _collect_arrays(state: TrainState):
    arrays = {
        "density.params": state.density.params,
        "density.log_sharpness": state.density.log_sharpness,
        "radiance.params": state.radiance.params,
        "corrections": state.corrections,
    }
    for name, adam in (("density", state.adam_density),
                       ("radiance", state.adam_radiance),
                       ("sharpness", state.adam_sharpness),
                       ("pose", state.adam_pose)):
        arrays[f"adam.{name}.m"] = adam.m
        arrays[f"adam.{name}.v"] = adam.v
    return arrays


def save_checkpoint(path, state: TrainState):
    arrays = _collect_arrays(state)
    directory = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        directory.append({"name": name, "dtype": str(arr.dtype),
                          "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "iteration": state.iteration,
        "config": _config_to_json(state.config),
        "density_spec": state.density.spec.to_json(),
        "radiance_spec": state.radiance.spec.to_json(),
        "density": {"feature_dim": state.density.feature_dim,
                    "position_bands": state.density.position_bands},
        "radiance": {"feature_dim": state.radiance.feature_dim,
                     "n_basis": state.radiance.n_basis,
                     "dir_bands": state.radiance.dir_bands},
        "adam_steps": {"density": state.adam_density.step,
                       "radiance": state.adam_radiance.step,
                       "sharpness": state.adam_sharpness.step,
                       "pose": state.adam_pose.step},
        "arrays": directory,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(FORMAT_VERSION, dtype="<u4").tobytes())
        fh.write(np.array(len(blob), dtype="<u8").tobytes())
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"),
                                                      copy=False).tobytes())


def load_checkpoint(path) -> TrainState:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        hlen = int(np.frombuffer(fh.read(8), dtype="<u8")[0])
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()

    arrays = {}
    for ent in header["arrays"]:
        dt = np.dtype(ent["dtype"]).newbyteorder("<")
        arr = np.frombuffer(payload, dtype=dt, offset=ent["offset"],
                            count=int(np.prod(ent["shape"], dtype=np.int64)))
        arrays[ent["name"]] = arr.reshape(ent["shape"]).astype(ent["dtype"])

    config = _config_from_json(header["config"])
    density = DensityField(spec=nm.MlpSpec.from_json(header["density_spec"]),
                           params=arrays["density.params"],
                           feature_dim=header["density"]["feature_dim"],
                           position_bands=header["density"]["position_bands"],
                           log_sharpness=arrays["density.log_sharpness"])
    radiance = RadianceField(spec=nm.MlpSpec.from_json(header["radiance_spec"]),
                             params=arrays["radiance.params"],
                             feature_dim=header["radiance"]["feature_dim"],
                             n_basis=header["radiance"]["n_basis"],
                             dir_bands=header["radiance"]["dir_bands"])

    def adam(name, params):
        st = nm.AdamState.for_params(params, eps=config.adam_eps)
        st.m = arrays[f"adam.{name}.m"]
        st.v = arrays[f"adam.{name}.v"]
        st.step = header["adam_steps"][name]
        return st

    return TrainState(config=config, density=density, radiance=radiance,
                      corrections=arrays["corrections"],
                      adam_density=adam("density", density.params),
                      adam_radiance=adam("radiance", radiance.params),
                      adam_sharpness=adam("sharpness", density.log_sharpness),
                      adam_pose=adam("pose", arrays["corrections"].ravel()),
                      iteration=header["iteration"])

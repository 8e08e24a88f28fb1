"""File formats: dataset CSV, model JSON, calibration JSON, sweep CSV.

Model weights are base64-encoded little-endian float64 arrays, so files are
text, diffable and bit-exact. Every file records a schema version, the
config hash and the seed.
"""

import base64
import csv
import hashlib
import io
import json
import math

import numpy as np

from .errors import FingerprintMismatchError, SchemaError
from .net import Architecture, NetworkParams, PARAM_ORDER, predict_offset
from .whitening import Whitener

MODEL_FORMAT = "offgrid-model"
MODEL_VERSION = 1
CALIBRATION_FORMAT = "offgrid-calibration"
CALIBRATION_VERSION = 1
SWEEP_SCHEMA = "offgrid-sweep/1"
DATASET_SCHEMA = "offgrid-dataset/1"
SWEEP_COLUMNS = ("scenario", "detector", "snr_db", "pd", "n_trials", "pfa_target")


def encode_array(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(s, shape=None):
    a = np.frombuffer(base64.b64decode(s), dtype="<f8").astype(float)
    return a.reshape(shape) if shape is not None else a


def _dump_json(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _load_json(path, expected_format):
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    if doc.get("format") != expected_format:
        raise SchemaError(f"{path} is not a {expected_format} file (format={doc.get('format')!r})")
    return doc


# --------------------------------------------------------------------------
# Dataset CSV
# --------------------------------------------------------------------------

def dataset_header(m):
    cols = ["trial", "y", "theta0", "snr_db"]
    for k in range(m):
        cols += [f"re{k}", f"im{k}"]
    return cols


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_dataset(path, obs, m, config_hash, seed):
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# schema={DATASET_SCHEMA} config_hash={config_hash} seed={seed}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(dataset_header(m))
        for i in range(len(obs)):
            row = [i, int(obs.y[i]), _fmt(obs.theta0[i]), _fmt(obs.snr_db[i])]
            for v in obs.z[i]:
                row += [repr(float(v.real)), repr(float(v.imag))]
            w.writerow(row)


def read_dataset(path):
    meta, rows = _read_commented_csv(path)
    header = rows[0]
    m = (len(header) - 4) // 2
    if header != dataset_header(m):
        raise SchemaError(f"{path}: unexpected dataset columns")
    body = rows[1:]
    y = np.array([int(r[1]) for r in body], dtype=np.int8)
    theta0 = np.array([float(r[2]) if r[2] else np.nan for r in body])
    snr = np.array([float(r[3]) if r[3] else np.nan for r in body])
    vals = np.array([[float(v) for v in r[4:]] for r in body]).reshape(len(body), m, 2) if body else np.zeros((0, m, 2))
    return meta, y, theta0, snr, vals[..., 0] + 1j * vals[..., 1]


# --------------------------------------------------------------------------
# Model file
# --------------------------------------------------------------------------

def save_model(path, params, whitener, scenario, training_cfg, history, best_epoch, config_hash, seed,
               probe_inputs):
    raw, _ = predict_offset(params, probe_inputs)
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config_hash": config_hash,
        "seed": seed,
        "scenario": scenario.fingerprint(),
        "whitener": {
            "estimator_kind": whitener.estimator_kind,
            "m": whitener.m,
            "sigma_hat_re": encode_array(whitener.sigma_hat.real),
            "sigma_hat_im": encode_array(whitener.sigma_hat.imag),
        },
        "architecture": {k: getattr(params.arch, k) for k in ("m", "channels1", "channels2", "kernel1", "kernel2")},
        "param_order": list(PARAM_ORDER),
        "param_shapes": {k: list(v) for k, v in params.arch.shapes().items()},
        "weights": encode_array(params.flat()),
        "training": training_cfg.snapshot(),
        "history": history,
        "best_epoch": best_epoch,
        "probe": {
            "inputs_re": encode_array(probe_inputs.real),
            "inputs_im": encode_array(probe_inputs.imag),
            "raw": encode_array(raw),
        },
    }
    _dump_json(doc, path)


class LoadedModel:
    def __init__(self, doc):
        self.doc = doc
        arch = Architecture(**doc["architecture"])
        if doc["param_order"] != list(PARAM_ORDER):
            raise SchemaError("model parameter order does not match this version")
        self.params = NetworkParams.from_flat(arch, decode_array(doc["weights"]))
        m = doc["whitener"]["m"]
        sigma = (decode_array(doc["whitener"]["sigma_hat_re"], (m, m))
                 + 1j * decode_array(doc["whitener"]["sigma_hat_im"], (m, m)))
        self.whitener = Whitener.from_covariance(sigma, doc["whitener"]["estimator_kind"])
        self.scenario = doc["scenario"]
        self.history = doc["history"]
        self.network_input = doc["training"].get("network_input", "u")
        n_probe = len(decode_array(doc["probe"]["raw"]))
        self.probe_inputs = (decode_array(doc["probe"]["inputs_re"], (n_probe, m))
                             + 1j * decode_array(doc["probe"]["inputs_im"], (n_probe, m)))
        self.probe_raw = decode_array(doc["probe"]["raw"])

    def check_scenario(self, scenario):
        saved = self.scenario
        current = scenario.fingerprint()
        diff = {k: (saved.get(k), current[k]) for k in current if saved.get(k) != current[k]}
        if diff:
            detail = ", ".join(f"{k}: model={a!r} config={b!r}" for k, (a, b) in sorted(diff.items()))
            raise FingerprintMismatchError(f"scenario differs from the one the model was trained on ({detail})")


def load_model(path):
    return LoadedModel(_load_json(path, MODEL_FORMAT))


# --------------------------------------------------------------------------
# Calibration file
# --------------------------------------------------------------------------

def file_sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def save_calibration(path, results, scenario, config_hash, seed, model_path=None):
    """``model_path`` is recorded by content hash so outputs do not depend on where files live."""
    doc = {
        "format": CALIBRATION_FORMAT,
        "version": CALIBRATION_VERSION,
        "config_hash": config_hash,
        "seed": seed,
        "scenario": scenario.fingerprint(),
        "model_sha256": file_sha256(model_path) if model_path else None,
        "detectors": {
            name: {"tau": r.tau, "target_pfa": r.target_pfa, "n_h0": r.n_h0,
                   "achieved_pfa": None if math.isnan(r.achieved_pfa) else r.achieved_pfa,
                   "achieved_pfa_se": None if math.isnan(r.achieved_pfa_se) else r.achieved_pfa_se,
                   "n_test": r.n_test}
            for name, r in results.items()
        },
    }
    _dump_json(doc, path)


def load_calibration(path):
    return _load_json(path, CALIBRATION_FORMAT)


# --------------------------------------------------------------------------
# Sweep CSV
# --------------------------------------------------------------------------

def _read_commented_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        text = f.read()
    meta = {}
    lines = text.splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        else:
            body.append(line)
    return meta, list(csv.reader(io.StringIO("\n".join(body))))


def format_sweep_csv(sweep, config_hash, scenario):
    out = io.StringIO()
    out.write(f"# schema={SWEEP_SCHEMA} config_hash={config_hash} seed={sweep.seed} "
              f"m={scenario.m} rho={scenario.rho!r}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in sweep.rows():
        w.writerow([row["scenario"], row["detector"], f"{row['snr_db']:g}", repr(row["pd"]),
                    row["n_trials"], repr(row["pfa_target"])])
    return out.getvalue()


def write_sweep_csv(path, sweep, config_hash, scenario):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_sweep_csv(sweep, config_hash, scenario))


def read_results_csv(path, required=("scenario", "detector", "snr_db", "pd")):
    """Rows of a sweep or reference CSV as dicts, with the comment metadata."""
    meta, rows = _read_commented_csv(path)
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    for col in required:
        if col not in header:
            raise SchemaError(f"{path}: missing column {col!r}")
    schema = meta.get("schema")
    if schema is not None and schema.startswith("offgrid-sweep/") and schema != SWEEP_SCHEMA:
        raise SchemaError(f"{path}: unsupported schema {schema}")
    records = []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        rec = dict(zip(header, r))
        for col in ("snr_db", "pd", "n_trials", "pfa_target"):
            if col in rec:
                try:
                    rec[col] = float(rec[col])
                except ValueError:
                    raise SchemaError(f"{path}:{lineno}: column {col!r} is not numeric ({rec[col]!r})") from None
        records.append(rec)
    return meta, records

"""Netpbm images, the EDNW weights format, YAML run configs and CSV reports."""
import csv
import math
import struct

import numpy as np
import yaml

from . import layers
from .errors import ConfigError, DomainError, FormatError, MissingParameterError
from .graph import EdnModel, NetworkConfig, plan_layers
from .layers import LayerParams
from .metrics import METRIC_FIELDS, REGIONS

# ------------------------------------------------------------------ netpbm

_WS = b" \t\r\n\v\f"


def _header_token(buf, pos):
    """Next whitespace-delimited header token, skipping # comments."""
    n = len(buf)
    while pos < n:
        if buf[pos] in _WS:
            pos += 1
        elif buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise FormatError("truncated header", start)
    return buf[start:pos], start, pos


def parse_pnm(buf, expect=None):
    """Decode a binary P5/P6 8-bit image. Returns uint8 (h, w) or (h, w, 3)."""
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise FormatError(f"bad magic {bytes(buf[:2])!r}, expected P5 or P6", 0)
    magic = buf[:2].decode()
    if expect is not None and magic != expect:
        raise FormatError(f"expected a {expect} file, found {magic}", 0)
    pos = 2
    values = []
    for what in ("width", "height", "maxval"):
        tok, start, pos = _header_token(buf, pos)
        if not tok.isdigit() or int(tok) < 1:
            raise FormatError(f"invalid {what} {tok!r}", start)
        values.append(int(tok))
    width, height, maxval = values
    if maxval != 255:
        raise FormatError(f"maxval {maxval} is not supported, only 255", start)
    if pos >= len(buf) or buf[pos] not in _WS:
        raise FormatError("missing whitespace after header", pos)
    pos += 1
    channels = 3 if magic == "P6" else 1
    need = width * height * channels
    have = len(buf) - pos
    if have < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {have}", len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after payload", pos + need)
    data = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return data.reshape((height, width, 3) if channels == 3 else (height, width)).copy()


def read_pnm(path, expect=None):
    with open(path, "rb") as fh:
        return parse_pnm(fh.read(), expect)


def write_pnm(path, pixels):
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise DomainError(f"pixels must be uint8, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise DomainError(f"cannot store an array of shape {pixels.shape} as PGM/PPM")
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def load_image_ppm(path, side=None):
    """RGB image as a (1, 3, side, side) float32 tensor in [0, 1]."""
    rgb = read_pnm(path, "P6")
    x = (rgb.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)[None]
    if side is not None:
        x = layers.upsample_bilinear(np.ascontiguousarray(x), side, side)
    return np.ascontiguousarray(x)


def load_map_pgm(path):
    return read_pnm(path, "P5").astype(np.float64) / 255.0


def load_mask_pgm(path):
    return read_pnm(path, "P5") >= 128


def quantize(values):
    """[0, 1] reals to bytes, rounding halves up."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and (np.isnan(v).any() or v.min() < 0.0 or v.max() > 1.0):
        raise DomainError("map values must lie in [0, 1]")
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_map_pgm(values, path):
    values = np.asarray(values)
    if values.ndim == 4:
        values = values[0, 0]
    write_pnm(path, quantize(values))


# ----------------------------------------------------------------- weights

MAGIC = b"EDNW"
FORMAT_VERSION = 1
_KEYS = ("weight", "bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var")


def encode_weights(params):
    """Serialize {layer path: LayerParams} in sorted path order."""
    entries = [(f"{path}.{key}", arr) for path in sorted(params)
               for key, arr in params[path].arrays().items()]
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode_weights(buf):
    """Parse an EDNW blob into {entry name: float32 array}."""
    if len(buf) < 12:
        raise FormatError("file shorter than the 12-byte header", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}", 0)
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    pos = 12
    entries = {}

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated {what}", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    for _ in range(count):
        start = pos
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not valid UTF-8", start + 4) from None
        if name in entries:
            raise FormatError(f"duplicate entry {name!r}", start)
        (ndim,) = struct.unpack("<I", take(4, "rank"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        size = math.prod(dims)
        payload = take(4 * size, f"payload of {name!r}")
        entries[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after {count} entries", pos)
    return entries


def params_from_entries(entries, config):
    """Group entries by layer and check them against the graph for ``config``."""
    plan = plan_layers(config)
    grouped = {}
    for name, arr in entries.items():
        path, _, key = name.rpartition(".")
        if key not in _KEYS or path not in plan:
            raise ConfigError(name, "entry does not belong to any layer of this network")
        grouped.setdefault(path, {})[key] = arr
    params = {}
    for path, lp in plan.items():
        got = grouped.get(path, {})
        need = ["weight", "bias"] + (["bn_gamma", "bn_beta", "bn_mean", "bn_var"] if lp.batchnorm else [])
        for key in need:
            if key not in got:
                raise MissingParameterError(path, f"weights file has no {path}.{key}")
        extra = set(got) - set(need)
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}", "unexpected entry for this layer")
        params[path] = LayerParams(path, **got)
    return EdnModel(config, params)


def save_weights(model, path):
    with open(path, "wb") as fh:
        fh.write(encode_weights(model.params))


def load_weights(path, config):
    with open(path, "rb") as fh:
        return params_from_entries(decode_weights(fh.read()), config)


# ------------------------------------------------------------------ config

CONFIG_KEYS = ("backbone_widths", "decoder_width", "edb_width", "rates_L", "rates_H", "rates_EH",
               "lite", "input_side", "seed")


def _int_list(key, value, length=None):
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                      for v in value):
        raise ConfigError(key, f"expected a list of integers, got {value!r}")
    if length is not None and len(value) != length:
        raise ConfigError(key, f"expected {length} values, got {len(value)}")
    return tuple(value)


def config_from_mapping(doc):
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a mapping")
    for key in doc:
        if key not in CONFIG_KEYS:
            raise ConfigError(str(key), "unknown key")
    kwargs = {}
    rates = {}
    for key, value in doc.items():
        if key == "backbone_widths":
            kwargs[key] = _int_list(key, value, 5)
        elif key.startswith("rates_"):
            rates[key[len("rates_"):]] = _int_list(key, value, 4)
        elif key == "lite":
            if not isinstance(value, bool):
                raise ConfigError(key, f"expected true or false, got {value!r}")
            kwargs[key] = value
        else:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(key, f"expected an integer, got {value!r}")
            kwargs[key] = value
    if rates:
        base = NetworkConfig().rate_groups
        kwargs["rate_groups"] = {**base, **rates}
    return NetworkConfig(**kwargs)


def load_run_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise FormatError(f"invalid YAML: {exc}", mark.index if mark else None) from None
    return config_from_mapping(doc)


def config_to_mapping(cfg):
    doc = {
        "backbone_widths": list(cfg.backbone_widths),
        "decoder_width": cfg.decoder_width,
        "edb_width": cfg.edb_width,
    }
    for group in ("L", "H", "EH"):
        doc[f"rates_{group}"] = list(cfg.rates(group))
    doc.update(lite=cfg.lite, input_side=cfg.input_side, seed=cfg.seed)
    return doc


def save_run_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config_to_mapping(cfg), fh, sort_keys=False)


# --------------------------------------------------------------------- csv

def fmt(value):
    return "nan" if value is None or math.isnan(value) else f"{value:.6f}"


def write_metrics_csv(path, rows, aggregate):
    """``rows`` is a list of (image name, scores dict or None for skipped)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("image",) + METRIC_FIELDS)
        for name, scores in rows:
            out.writerow([name] + [fmt(scores[k] if scores else float("nan")) for k in METRIC_FIELDS])
        out.writerow(["ALL"] + [fmt(aggregate[k]) for k in METRIC_FIELDS])


PARTITION_FIELDS = tuple(f"{r}_{s}" for s in ("a", "b") for r in REGIONS) + \
    tuple(f"impv_{r}" for r in REGIONS)


def write_partition_csv(path, rows, aggregate):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("image",) + PARTITION_FIELDS)
        for name, values in rows:
            out.writerow([name] + [fmt(values[k] if values else float("nan")) for k in PARTITION_FIELDS])
        out.writerow(["ALL"] + [fmt(aggregate[k]) for k in PARTITION_FIELDS])

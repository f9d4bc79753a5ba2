"""The nine static feature sets and the fixed 2381-dimensional layout.

Each feature set has an EMBER-compatible *raw* form (a JSON-able object,
matching the field names used by EMBER v2 JSONL records) and a *processed*
form (a fixed-width float64 block).  Concatenating the nine processed
blocks in canonical order yields the 2381-wide feature vector:

    ====  =========================  =====  ============
    abbr  JSONL field                width  columns
    ====  =========================  =====  ============
    BH    histogram                  256    [0, 256)
    BE    byteentropy                256    [256, 512)
    ST    strings                    104    [512, 616)
    GE    general                    10     [616, 626)
    HE    header                     62     [626, 688)
    SE    section                    255    [688, 943)
    IM    imports                    1280   [943, 2223)
    EX    exports                    128    [2223, 2351)
    DD    datadirectories            30     [2351, 2381)
    ====  =========================  =====  ============

Extraction is a total function of the input bytes: files whose core PE
headers do not parse still produce a vector (BH/BE/ST need no parsing;
the header-derived blocks are zero apart from the raw file size).
"""

from __future__ import annotations

import re

import numpy as np

from . import pe
from .errors import MalformedPE
from .hashing import hash_pairs, hash_tokens

__all__ = [
    "FEATURE_ORDER",
    "FEATURE_DIMS",
    "FEATURE_RANGES",
    "FEATURE_FIELDS",
    "TOTAL_DIM",
    "byte_histogram",
    "byte_entropy_histogram",
    "string_features",
    "general_info",
    "header_info",
    "section_info",
    "import_info",
    "export_info",
    "data_directory_info",
    "vectorize",
    "raw_record",
    "process_raw_record",
    "process_raw_group",
    "PEVectorizer",
]

FEATURE_ORDER = ("BH", "BE", "ST", "GE", "HE", "SE", "IM", "EX", "DD")

FEATURE_DIMS = {
    "BH": 256,
    "BE": 256,
    "ST": 104,
    "GE": 10,
    "HE": 62,
    "SE": 255,
    "IM": 1280,
    "EX": 128,
    "DD": 30,
}

FEATURE_FIELDS = {
    "BH": "histogram",
    "BE": "byteentropy",
    "ST": "strings",
    "GE": "general",
    "HE": "header",
    "SE": "section",
    "IM": "imports",
    "EX": "exports",
    "DD": "datadirectories",
}

TOTAL_DIM = sum(FEATURE_DIMS.values())


def _ranges() -> dict[str, tuple[int, int]]:
    out, start = {}, 0
    for name in FEATURE_ORDER:
        out[name] = (start, start + FEATURE_DIMS[name])
        start += FEATURE_DIMS[name]
    return out


FEATURE_RANGES = _ranges()

BE_WINDOW = 2048
BE_STEP = 1024

_PRINTABLE_RUN = re.compile(rb"[\x20-\x7e]{5,}")
_PATH_RE = re.compile(rb"c:\\", re.IGNORECASE)
_URL_RE = re.compile(rb"https?://", re.IGNORECASE)
_REGISTRY_RE = re.compile(rb"HKEY_")
_MZ_RE = re.compile(rb"MZ")


# ---------------------------------------------------------------------------
# BH: byte histogram
# ---------------------------------------------------------------------------

def raw_byte_histogram(data: bytes) -> list[int]:
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    return counts.tolist()

def process_byte_histogram(raw: list) -> np.ndarray:
    counts = np.asarray(raw, dtype=np.float64)
    total = counts.sum()
    return counts / total if total > 0 else np.zeros(256, dtype=np.float64)

def byte_histogram(data: bytes) -> np.ndarray:
    """Normalized byte-frequency histogram of the whole file (256 values)."""
    return process_byte_histogram(raw_byte_histogram(data))


# ---------------------------------------------------------------------------
# BE: byte-entropy histogram
# ---------------------------------------------------------------------------

def _window_counts(block: np.ndarray) -> tuple[int, np.ndarray]:
    # Row = window entropy (bits/byte in [0,8], 16 half-bit bins);
    # columns = high-nibble counts of the window's bytes.
    byte_counts = np.bincount(block, minlength=256)
    p = byte_counts[byte_counts > 0] / block.shape[0]
    h = float(-(p * np.log2(p)).sum())
    hbin = min(int(h * 2), 15)
    return hbin, np.bincount(block >> 4, minlength=16)

def raw_byte_entropy(data: bytes, window: int = BE_WINDOW, step: int = BE_STEP) -> list[int]:
    grid = np.zeros((16, 16), dtype=np.int64)
    a = np.frombuffer(data, dtype=np.uint8)
    if a.shape[0] == 0:
        return grid.ravel().tolist()
    if a.shape[0] < window:
        hbin, counts = _window_counts(a)
        grid[hbin] += counts
    else:
        for off in range(0, a.shape[0] - window + 1, step):
            hbin, counts = _window_counts(a[off:off + window])
            grid[hbin] += counts
    return grid.ravel().tolist()

def process_byte_entropy(raw: list) -> np.ndarray:
    counts = np.asarray(raw, dtype=np.float64)
    total = counts.sum()
    return counts / total if total > 0 else np.zeros(256, dtype=np.float64)

def byte_entropy_histogram(data: bytes) -> np.ndarray:
    """Joint (window entropy x high nibble) histogram over 2048-byte windows, step 1024.

    Flattened row-major to 256 values and normalized to sum 1.  Files shorter
    than one window use a single whole-file window; empty input is all zeros.
    """
    return process_byte_entropy(raw_byte_entropy(data))


# ---------------------------------------------------------------------------
# ST: printable-string statistics
# ---------------------------------------------------------------------------

def raw_string_info(data: bytes) -> dict:
    strings = _PRINTABLE_RUN.findall(data)
    if strings:
        lengths = [len(s) for s in strings]
        shifted = np.frombuffer(b"".join(strings), dtype=np.uint8) - 0x20
        counts = np.bincount(shifted, minlength=96)
        total = int(counts.sum())
        p = counts[counts > 0] / total
        entropy = float(-(p * np.log2(p)).sum())
        avlength = sum(lengths) / len(lengths)
    else:
        counts = np.zeros(96, dtype=np.int64)
        total = 0
        entropy = 0.0
        avlength = 0.0
    return {
        "numstrings": len(strings),
        "avlength": avlength,
        "printabledist": counts.tolist(),
        "printables": total,
        "entropy": entropy,
        "paths": len(_PATH_RE.findall(data)),
        "urls": len(_URL_RE.findall(data)),
        "registry": len(_REGISTRY_RE.findall(data)),
        "MZ": len(_MZ_RE.findall(data)),
    }

def process_string_info(raw: dict) -> np.ndarray:
    dist = np.asarray(raw.get("printabledist", ()), dtype=np.float64)
    if dist.shape[0] != 96:
        dist = np.zeros(96, dtype=np.float64)
    printables = float(raw.get("printables", 0))
    divisor = printables if printables > 0 else 1.0
    return np.hstack([
        float(raw.get("numstrings", 0)),
        float(raw.get("avlength", 0)),
        dist / divisor,
        printables,
        float(raw.get("entropy", 0)),
        float(raw.get("paths", 0)),
        float(raw.get("urls", 0)),
        float(raw.get("registry", 0)),
        float(raw.get("MZ", 0)),
    ])

def string_features(data: bytes) -> np.ndarray:
    """Statistics over printable runs of five or more bytes in [0x20, 0x7f) (104 values).

    Layout: count of strings, mean length, 96-bin character distribution
    (sums to 1; the last bin is reserved and stays 0), total printable
    characters, distribution entropy, then occurrence counts of ``C:\\``,
    ``http(s)://``, ``HKEY_`` and ``MZ``.
    """
    return process_string_info(raw_string_info(data))


# ---------------------------------------------------------------------------
# GE: general file information
# ---------------------------------------------------------------------------

def raw_general_info(parsed: pe.ParsedPE | None, file_size: int) -> dict:
    if parsed is None:
        return {
            "size": file_size, "vsize": 0, "has_debug": 0, "exports": 0, "imports": 0,
            "has_relocations": 0, "has_resources": 0, "has_signature": 0, "has_tls": 0,
            "symbols": 0,
        }
    return {
        "size": file_size,
        "vsize": sum(s.virtual_size for s in parsed.sections),
        "has_debug": int(parsed.has_debug),
        "exports": len(parsed.exports),
        "imports": parsed.num_import_functions,
        "has_relocations": int(parsed.has_relocations),
        "has_resources": int(parsed.has_resources),
        "has_signature": int(parsed.has_signature),
        "has_tls": int(parsed.has_tls),
        "symbols": parsed.coff_header.num_symbols,
    }

_GENERAL_KEYS = ("size", "vsize", "has_debug", "exports", "imports",
                 "has_relocations", "has_resources", "has_signature", "has_tls", "symbols")

def process_general_info(raw: dict) -> np.ndarray:
    return np.asarray([float(raw.get(k, 0)) for k in _GENERAL_KEYS], dtype=np.float64)

def general_info(parsed: pe.ParsedPE, file_size: int) -> np.ndarray:
    """File size, summed section virtual size, directory-presence flags and counts (10 values)."""
    return process_general_info(raw_general_info(parsed, file_size))


# ---------------------------------------------------------------------------
# HE: COFF / Optional Header information
# ---------------------------------------------------------------------------

def raw_header_info(parsed: pe.ParsedPE | None) -> dict:
    coff = {"timestamp": 0, "machine": "", "characteristics": []}
    optional = {
        "subsystem": "", "dll_characteristics": [], "magic": "",
        "major_image_version": 0, "minor_image_version": 0,
        "major_linker_version": 0, "minor_linker_version": 0,
        "major_operating_system_version": 0, "minor_operating_system_version": 0,
        "major_subsystem_version": 0, "minor_subsystem_version": 0,
        "sizeof_code": 0, "sizeof_headers": 0, "sizeof_heap_commit": 0,
    }
    if parsed is not None:
        coff["timestamp"] = parsed.coff_header.timestamp
        coff["machine"] = pe.machine_name(parsed.coff_header.machine)
        coff["characteristics"] = pe.coff_characteristic_names(parsed.coff_header.characteristics)
        opt = parsed.optional_header
        optional.update({
            "subsystem": pe.subsystem_name(opt.subsystem),
            "dll_characteristics": pe.dll_characteristic_names(opt.dll_characteristics),
            "magic": pe.magic_name(opt.magic),
            "major_image_version": opt.major_image_version,
            "minor_image_version": opt.minor_image_version,
            "major_linker_version": opt.major_linker_version,
            "minor_linker_version": opt.minor_linker_version,
            "major_operating_system_version": opt.major_os_version,
            "minor_operating_system_version": opt.minor_os_version,
            "major_subsystem_version": opt.major_subsystem_version,
            "minor_subsystem_version": opt.minor_subsystem_version,
            "sizeof_code": opt.sizeof_code,
            "sizeof_headers": opt.sizeof_headers,
            "sizeof_heap_commit": opt.sizeof_heap_commit,
        })
    return {"coff": coff, "optional": optional}

def _name_token(value: str) -> list[str]:
    # An absent name ("" from an unparsed header) contributes no token.
    return [value] if value else []

def process_header_info(raw: dict) -> np.ndarray:
    coff = raw.get("coff", {})
    optional = raw.get("optional", {})
    return np.hstack([
        float(coff.get("timestamp", 0)),
        hash_tokens(_name_token(coff.get("machine", "")), 10),
        hash_tokens(coff.get("characteristics", ()), 10),
        hash_tokens(_name_token(optional.get("subsystem", "")), 10),
        hash_tokens(optional.get("dll_characteristics", ()), 10),
        hash_tokens(_name_token(optional.get("magic", "")), 10),
        float(optional.get("major_image_version", 0)),
        float(optional.get("minor_image_version", 0)),
        float(optional.get("major_linker_version", 0)),
        float(optional.get("minor_linker_version", 0)),
        float(optional.get("major_operating_system_version", 0)),
        float(optional.get("minor_operating_system_version", 0)),
        float(optional.get("major_subsystem_version", 0)),
        float(optional.get("minor_subsystem_version", 0)),
        float(optional.get("sizeof_code", 0)),
        float(optional.get("sizeof_headers", 0)),
        float(optional.get("sizeof_heap_commit", 0)),
    ])

def header_info(parsed: pe.ParsedPE) -> np.ndarray:
    """Timestamp, hashed header enum names, version numbers and sizes (62 values)."""
    return process_header_info(raw_header_info(parsed))


# ---------------------------------------------------------------------------
# SE: section table information
# ---------------------------------------------------------------------------

def raw_section_info(parsed: pe.ParsedPE | None) -> dict:
    if parsed is None:
        return {"entry": "", "sections": []}
    entry = parsed.entry_section
    return {
        "entry": entry.name if entry is not None else "",
        "sections": [
            {
                "name": s.name,
                "size": s.raw_size,
                "entropy": s.entropy,
                "vsize": s.virtual_size,
                "props": s.characteristic_names,
            }
            for s in parsed.sections
        ],
    }

def process_section_info(raw: dict) -> np.ndarray:
    sections = raw.get("sections", ())
    entry = raw.get("entry", "")
    general = [
        len(sections),
        sum(1 for s in sections if s["size"] == 0),
        sum(1 for s in sections if s["name"] == ""),
        sum(1 for s in sections if "MEM_READ" in s["props"] and "MEM_EXECUTE" in s["props"]),
        sum(1 for s in sections if "MEM_WRITE" in s["props"]),
    ]
    entry_props = [p for s in sections if s["name"] == entry for p in s["props"]]
    return np.hstack([
        np.asarray(general, dtype=np.float64),
        hash_pairs([(s["name"], s["size"]) for s in sections], 50),
        hash_pairs([(s["name"], s["entropy"]) for s in sections], 50),
        hash_pairs([(s["name"], s["vsize"]) for s in sections], 50),
        hash_tokens([entry] if entry else [], 50),
        hash_tokens(entry_props, 50),
    ])

def section_info(parsed: pe.ParsedPE) -> np.ndarray:
    """Section counts plus hashed (name, size/entropy/vsize) and entry-point blocks (255 values)."""
    return process_section_info(raw_section_info(parsed))


# ---------------------------------------------------------------------------
# IM: imported libraries and functions
# ---------------------------------------------------------------------------

def raw_import_info(parsed: pe.ParsedPE | None) -> dict:
    imports: dict[str, list[str]] = {}
    if parsed is not None:
        for lib in parsed.imports:
            imports.setdefault(lib.name, []).extend(lib.functions)
    return imports

def process_import_info(raw: dict) -> np.ndarray:
    # Library names are case-insensitive on Windows; function names are not.
    libraries = sorted({lib.lower() for lib in raw})
    entries = [f"{lib.lower()}:{fn}" for lib, functions in raw.items() for fn in functions]
    return np.hstack([hash_tokens(libraries, 256), hash_tokens(entries, 1024)])

def import_info(parsed: pe.ParsedPE) -> np.ndarray:
    """Hashed unique library names (256) then hashed library:function names (1024)."""
    return process_import_info(raw_import_info(parsed))


# ---------------------------------------------------------------------------
# EX: exported functions
# ---------------------------------------------------------------------------

def raw_export_info(parsed: pe.ParsedPE | None) -> list[str]:
    return list(parsed.exports) if parsed is not None else []

def process_export_info(raw: list) -> np.ndarray:
    return hash_tokens(raw, 128)

def export_info(parsed: pe.ParsedPE) -> np.ndarray:
    """Hashed exported function names (128 values)."""
    return process_export_info(raw_export_info(parsed))


# ---------------------------------------------------------------------------
# DD: data directories
# ---------------------------------------------------------------------------

def raw_data_directory_info(parsed: pe.ParsedPE | None) -> list[dict]:
    if parsed is None:
        return []
    return [
        {"name": pe.DATA_DIRECTORY_NAMES[i], "size": d.size, "virtual_address": d.virtual_address}
        for i, d in enumerate(parsed.data_directories[:15])
    ]

def process_data_directory_info(raw: list) -> np.ndarray:
    out = np.zeros(30, dtype=np.float64)
    for i in range(15):
        if i < len(raw):
            out[2 * i] = float(raw[i].get("size", 0))
            out[2 * i + 1] = float(raw[i].get("virtual_address", 0))
    return out

def data_directory_info(parsed: pe.ParsedPE) -> np.ndarray:
    """(size, virtual address) of the first 15 standard data directories (30 values)."""
    return process_data_directory_info(raw_data_directory_info(parsed))


# ---------------------------------------------------------------------------
# whole-vector assembly
# ---------------------------------------------------------------------------

_PROCESSORS = {
    "BH": process_byte_histogram,
    "BE": process_byte_entropy,
    "ST": process_string_info,
    "GE": process_general_info,
    "HE": process_header_info,
    "SE": process_section_info,
    "IM": process_import_info,
    "EX": process_export_info,
    "DD": process_data_directory_info,
}

_EMPTY_RAW = {
    "BH": lambda: [0] * 256,
    "BE": lambda: [0] * 256,
    "ST": lambda: raw_string_info(b""),
    "GE": lambda: raw_general_info(None, 0),
    "HE": lambda: raw_header_info(None),
    "SE": lambda: raw_section_info(None),
    "IM": lambda: raw_import_info(None),
    "EX": lambda: raw_export_info(None),
    "DD": lambda: raw_data_directory_info(None),
}


def raw_record(data: bytes) -> dict:
    """EMBER-style raw feature record for one file (JSON-able, one group per feature set)."""
    try:
        parsed = pe.parse_pe(data)
    except MalformedPE:
        parsed = None
    return {
        "histogram": raw_byte_histogram(data),
        "byteentropy": raw_byte_entropy(data),
        "strings": raw_string_info(data),
        "general": raw_general_info(parsed, len(data)),
        "header": raw_header_info(parsed),
        "section": raw_section_info(parsed),
        "imports": raw_import_info(parsed),
        "exports": raw_export_info(parsed),
        "datadirectories": raw_data_directory_info(parsed),
    }


def process_raw_group(abbr: str, raw) -> np.ndarray:
    """Vectorize one stored feature group; ``None`` means the group is absent."""
    if raw is None:
        raw = _EMPTY_RAW[abbr]()
    block = _PROCESSORS[abbr](raw)
    expected = FEATURE_DIMS[abbr]
    if block.shape != (expected,):
        raise ValueError(f"{abbr} block has shape {block.shape}, expected ({expected},)")
    return block


def process_raw_record(record: dict) -> np.ndarray:
    """Vectorize a raw feature record into the 2381-wide layout."""
    blocks = [process_raw_group(abbr, record.get(FEATURE_FIELDS[abbr])) for abbr in FEATURE_ORDER]
    return np.hstack(blocks)


def vectorize(data: bytes) -> np.ndarray:
    """Feature vector of one file: 2381 float64 values, never raises."""
    return process_raw_record(raw_record(data))


class PEVectorizer:
    """Stateless sklearn-style transformer mapping PE file bytes to feature vectors.

    ``transform`` accepts an iterable of byte strings and returns an
    ``(n, 2381)`` float64 matrix, so it drops into sklearn pipelines ahead
    of a scaler and a classifier.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        rows = [vectorize(data) for data in X]
        if not rows:
            return np.zeros((0, TOTAL_DIM), dtype=np.float64)
        return np.vstack(rows)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)

    def get_params(self, deep=True) -> dict:
        return {}

    def set_params(self, **params):
        if params:
            raise ValueError(f"PEVectorizer takes no parameters, got {sorted(params)}")
        return self

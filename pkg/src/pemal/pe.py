"""Minimal, tolerant PE/COFF parser built on :mod:`struct`.

Parses just enough of the Portable Executable format to drive static
feature extraction: DOS header, COFF header, Optional Header (PE32 and
PE32+), the 16 data directories, the section table with per-section raw
entropy, and the import/export name tables.  No external parsing library
is used, all fields are read little-endian per the format.

Hostile input is the normal case.  Only unusable core headers raise
:class:`~pemal.errors.MalformedPE`; damaged import/export sub-structures
silently degrade to empty values, and every read is bounds-checked so a
fuzzed file can never index outside the input buffer.

Reference: Microsoft PE Format documentation,
https://learn.microsoft.com/en-us/windows/win32/debug/pe-format
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

from .errors import MalformedPE

__all__ = [
    "ParsedPE",
    "Section",
    "ImportedLibrary",
    "parse_pe",
    "section_entropy",
    "DATA_DIRECTORY_NAMES",
]

DOS_MAGIC = b"MZ"
PE_SIGNATURE = b"PE\x00\x00"
PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

NUM_DATA_DIRECTORIES = 16

# Standard order of the Optional Header data directories.
DATA_DIRECTORY_NAMES = (
    "EXPORT_TABLE",
    "IMPORT_TABLE",
    "RESOURCE_TABLE",
    "EXCEPTION_TABLE",
    "CERTIFICATE_TABLE",
    "BASE_RELOCATION_TABLE",
    "DEBUG",
    "ARCHITECTURE",
    "GLOBAL_PTR",
    "TLS_TABLE",
    "LOAD_CONFIG_TABLE",
    "BOUND_IMPORT",
    "IAT",
    "DELAY_IMPORT_DESCRIPTOR",
    "CLR_RUNTIME_HEADER",
    "RESERVED",
)

_DIR_EXPORT = 0
_DIR_IMPORT = 1
_DIR_RESOURCE = 2
_DIR_CERTIFICATE = 4
_DIR_BASERELOC = 5
_DIR_DEBUG = 6
_DIR_TLS = 9

MACHINE_NAMES = {
    0x0000: "UNKNOWN",
    0x01D3: "AM33",
    0x8664: "AMD64",
    0x01C0: "ARM",
    0xAA64: "ARM64",
    0x01C4: "ARMNT",
    0x0EBC: "EBC",
    0x014C: "I386",
    0x0200: "IA64",
    0x9041: "M32R",
    0x0266: "MIPS16",
    0x0366: "MIPSFPU",
    0x0466: "MIPSFPU16",
    0x01F0: "POWERPC",
    0x01F1: "POWERPCFP",
    0x0166: "R4000",
    0x5032: "RISCV32",
    0x5064: "RISCV64",
    0x5128: "RISCV128",
    0x01A2: "SH3",
    0x01A3: "SH3DSP",
    0x01A6: "SH4",
    0x01A8: "SH5",
    0x01C2: "THUMB",
    0x0169: "WCEMIPSV2",
}

COFF_CHARACTERISTIC_NAMES = (
    (0x0001, "RELOCS_STRIPPED"),
    (0x0002, "EXECUTABLE_IMAGE"),
    (0x0004, "LINE_NUMS_STRIPPED"),
    (0x0008, "LOCAL_SYMS_STRIPPED"),
    (0x0010, "AGGRESSIVE_WS_TRIM"),
    (0x0020, "LARGE_ADDRESS_AWARE"),
    (0x0080, "BYTES_REVERSED_LO"),
    (0x0100, "32BIT_MACHINE"),
    (0x0200, "DEBUG_STRIPPED"),
    (0x0400, "REMOVABLE_RUN_FROM_SWAP"),
    (0x0800, "NET_RUN_FROM_SWAP"),
    (0x1000, "SYSTEM"),
    (0x2000, "DLL"),
    (0x4000, "UP_SYSTEM_ONLY"),
    (0x8000, "BYTES_REVERSED_HI"),
)

SUBSYSTEM_NAMES = {
    0: "UNKNOWN",
    1: "NATIVE",
    2: "WINDOWS_GUI",
    3: "WINDOWS_CUI",
    5: "OS2_CUI",
    7: "POSIX_CUI",
    8: "NATIVE_WINDOWS",
    9: "WINDOWS_CE_GUI",
    10: "EFI_APPLICATION",
    11: "EFI_BOOT_SERVICE_DRIVER",
    12: "EFI_RUNTIME_DRIVER",
    13: "EFI_ROM",
    14: "XBOX",
    16: "WINDOWS_BOOT_APPLICATION",
}

DLL_CHARACTERISTIC_NAMES = (
    (0x0020, "HIGH_ENTROPY_VA"),
    (0x0040, "DYNAMIC_BASE"),
    (0x0080, "FORCE_INTEGRITY"),
    (0x0100, "NX_COMPAT"),
    (0x0200, "NO_ISOLATION"),
    (0x0400, "NO_SEH"),
    (0x0800, "NO_BIND"),
    (0x1000, "APPCONTAINER"),
    (0x2000, "WDM_DRIVER"),
    (0x4000, "GUARD_CF"),
    (0x8000, "TERMINAL_SERVER_AWARE"),
)

# Bit flags only; the 4-bit ALIGN_* field is not decoded into names.
SECTION_CHARACTERISTIC_NAMES = (
    (0x00000008, "TYPE_NO_PAD"),
    (0x00000020, "CNT_CODE"),
    (0x00000040, "CNT_INITIALIZED_DATA"),
    (0x00000080, "CNT_UNINITIALIZED_DATA"),
    (0x00000100, "LNK_OTHER"),
    (0x00000200, "LNK_INFO"),
    (0x00000800, "LNK_REMOVE"),
    (0x00001000, "LNK_COMDAT"),
    (0x00008000, "GPREL"),
    (0x00020000, "MEM_16BIT"),
    (0x00040000, "MEM_LOCKED"),
    (0x00080000, "MEM_PRELOAD"),
    (0x01000000, "LNK_NRELOC_OVFL"),
    (0x02000000, "MEM_DISCARDABLE"),
    (0x04000000, "MEM_NOT_CACHED"),
    (0x08000000, "MEM_NOT_PAGED"),
    (0x10000000, "MEM_SHARED"),
    (0x20000000, "MEM_EXECUTE"),
    (0x40000000, "MEM_READ"),
    (0x80000000, "MEM_WRITE"),
)

# Caps keep tolerant parsing linear in the input size on hostile files.
_MAX_IMPORT_DESCRIPTORS = 4096
_MAX_FUNCTIONS_PER_LIBRARY = 65536
_MAX_TOTAL_IMPORTS = 262144
_MAX_EXPORT_NAMES = 65536
_MAX_NAME_BYTES = 4096


def machine_name(code: int) -> str:
    return MACHINE_NAMES.get(code, "UNKNOWN")


def subsystem_name(code: int) -> str:
    return SUBSYSTEM_NAMES.get(code, "UNKNOWN")


def magic_name(code: int) -> str:
    if code == PE32_MAGIC:
        return "PE32"
    if code == PE32PLUS_MAGIC:
        return "PE32_PLUS"
    return "UNKNOWN"


def coff_characteristic_names(flags: int) -> list[str]:
    return [name for bit, name in COFF_CHARACTERISTIC_NAMES if flags & bit]


def dll_characteristic_names(flags: int) -> list[str]:
    return [name for bit, name in DLL_CHARACTERISTIC_NAMES if flags & bit]


def section_characteristic_names(flags: int) -> list[str]:
    return [name for bit, name in SECTION_CHARACTERISTIC_NAMES if flags & bit]


def section_entropy(data: bytes) -> float:
    """Shannon entropy of ``data`` in bits per byte, in [0, 8]. Empty input -> 0."""
    if not data:
        return 0.0
    counts = [0] * 256
    for b in data:
        counts[b] += 1
    n = len(data)
    h = 0.0
    for c in counts:
        if c:
            p = c / n
            h -= p * math.log2(p)
    return h


@dataclass(frozen=True)
class DosHeader:
    magic: bytes
    pe_offset: int


@dataclass(frozen=True)
class CoffHeader:
    machine: int
    num_sections: int
    timestamp: int
    characteristics: int
    num_symbols: int


@dataclass(frozen=True)
class OptionalHeader:
    magic: int
    subsystem: int
    dll_characteristics: int
    major_linker_version: int
    minor_linker_version: int
    major_image_version: int
    minor_image_version: int
    major_os_version: int
    minor_os_version: int
    major_subsystem_version: int
    minor_subsystem_version: int
    sizeof_code: int
    sizeof_headers: int
    sizeof_heap_commit: int
    entry_point_rva: int


@dataclass(frozen=True)
class DataDirectory:
    virtual_address: int
    size: int

    @property
    def present(self) -> bool:
        return self.virtual_address != 0 and self.size != 0


@dataclass(frozen=True)
class Section:
    name: str
    virtual_size: int
    virtual_address: int
    raw_size: int
    raw_offset: int
    characteristics: int
    entropy: float
    contains_entry_point: bool

    @property
    def characteristic_names(self) -> list[str]:
        return section_characteristic_names(self.characteristics)


@dataclass(frozen=True)
class ImportedLibrary:
    name: str
    functions: tuple[str, ...]


@dataclass(frozen=True)
class ParsedPE:
    """Immutable structured view of one PE file."""

    dos_header: DosHeader
    coff_header: CoffHeader
    optional_header: OptionalHeader
    data_directories: tuple[DataDirectory, ...]
    sections: tuple[Section, ...]
    imports: tuple[ImportedLibrary, ...] = field(default=())
    exports: tuple[str, ...] = field(default=())

    @property
    def has_debug(self) -> bool:
        return self.data_directories[_DIR_DEBUG].present

    @property
    def has_relocations(self) -> bool:
        return self.data_directories[_DIR_BASERELOC].present

    @property
    def has_resources(self) -> bool:
        return self.data_directories[_DIR_RESOURCE].present

    @property
    def has_signature(self) -> bool:
        return self.data_directories[_DIR_CERTIFICATE].present

    @property
    def has_tls(self) -> bool:
        return self.data_directories[_DIR_TLS].present

    @property
    def num_import_functions(self) -> int:
        return sum(len(lib.functions) for lib in self.imports)

    @property
    def entry_section(self) -> Section | None:
        for s in self.sections:
            if s.contains_entry_point:
                return s
        return None


def _decode_name(raw: bytes) -> str:
    return raw.decode("utf-8", "surrogateescape")


def _section_name(raw: bytes) -> str:
    # Truncate at the first NUL of the 8-byte field; keep raw bytes otherwise.
    nul = raw.find(b"\x00")
    if nul >= 0:
        raw = raw[:nul]
    return _decode_name(raw)


class _Reader:
    """Bounds-checked little-endian reads over the input buffer."""

    def __init__(self, data: bytes):
        self.data = data

    def need(self, offset: int, count: int, what: str) -> bytes:
        if offset < 0 or offset + count > len(self.data):
            raise MalformedPE(f"{what} truncated", max(0, min(offset, len(self.data))))
        return self.data[offset:offset + count]

    def try_bytes(self, offset: int, count: int) -> bytes | None:
        if offset < 0 or count < 0 or offset + count > len(self.data):
            return None
        return self.data[offset:offset + count]

    def try_u16(self, offset: int) -> int | None:
        raw = self.try_bytes(offset, 2)
        return None if raw is None else int.from_bytes(raw, "little")

    def try_u32(self, offset: int) -> int | None:
        raw = self.try_bytes(offset, 4)
        return None if raw is None else int.from_bytes(raw, "little")

    def try_u64(self, offset: int) -> int | None:
        raw = self.try_bytes(offset, 8)
        return None if raw is None else int.from_bytes(raw, "little")

    def try_cstring(self, offset: int, limit: int = _MAX_NAME_BYTES) -> bytes | None:
        if offset < 0 or offset >= len(self.data):
            return None
        end = self.data.find(b"\x00", offset, offset + limit)
        if end < 0:
            end = min(offset + limit, len(self.data))
        return self.data[offset:end]


def _rva_to_offset(rva: int, sections: tuple[Section, ...], sizeof_headers: int) -> int | None:
    if 0 <= rva < sizeof_headers:
        return rva
    for s in sections:
        span = max(s.virtual_size, s.raw_size)
        if s.virtual_address <= rva < s.virtual_address + span:
            return s.raw_offset + (rva - s.virtual_address)
    return None


def _parse_imports(r: _Reader, sections, sizeof_headers: int, directory: DataDirectory,
                   is_pe32_plus: bool) -> tuple[ImportedLibrary, ...]:
    if not directory.present:
        return ()
    table = _rva_to_offset(directory.virtual_address, sections, sizeof_headers)
    if table is None:
        return ()
    libraries: list[ImportedLibrary] = []
    total = 0
    for i in range(_MAX_IMPORT_DESCRIPTORS):
        desc = r.try_bytes(table + 20 * i, 20)
        if desc is None or desc == b"\x00" * 20:
            break
        original_first_thunk, _, _, name_rva, first_thunk = struct.unpack("<IIIII", desc)
        if name_rva == 0:
            break
        name_off = _rva_to_offset(name_rva, sections, sizeof_headers)
        if name_off is None:
            break
        raw_name = r.try_cstring(name_off)
        if raw_name is None:
            break
        thunk_rva = original_first_thunk or first_thunk
        functions: list[str] = []
        thunk_off = _rva_to_offset(thunk_rva, sections, sizeof_headers) if thunk_rva else None
        if thunk_off is not None:
            width = 8 if is_pe32_plus else 4
            ordinal_bit = 1 << (width * 8 - 1)
            for j in range(_MAX_FUNCTIONS_PER_LIBRARY):
                entry = r.try_u64(thunk_off + width * j) if is_pe32_plus else r.try_u32(thunk_off + width * j)
                if not entry:
                    break
                if entry & ordinal_bit:
                    functions.append("ordinal" + str(entry & 0xFFFF))
                else:
                    hint_off = _rva_to_offset(entry & (ordinal_bit - 1), sections, sizeof_headers)
                    if hint_off is None:
                        break
                    raw_func = r.try_cstring(hint_off + 2)
                    if raw_func is None:
                        break
                    functions.append(_decode_name(raw_func))
                total += 1
                if total >= _MAX_TOTAL_IMPORTS:
                    break
        libraries.append(ImportedLibrary(_decode_name(raw_name), tuple(functions)))
        if total >= _MAX_TOTAL_IMPORTS:
            break
    return tuple(libraries)


def _parse_exports(r: _Reader, sections, sizeof_headers: int, directory: DataDirectory) -> tuple[str, ...]:
    if not directory.present:
        return ()
    table = _rva_to_offset(directory.virtual_address, sections, sizeof_headers)
    if table is None:
        return ()
    raw = r.try_bytes(table, 40)
    if raw is None:
        return ()
    num_names = int.from_bytes(raw[24:28], "little")
    names_rva = int.from_bytes(raw[32:36], "little")
    names_off = _rva_to_offset(names_rva, sections, sizeof_headers)
    if names_off is None:
        return ()
    names: list[str] = []
    for i in range(min(num_names, _MAX_EXPORT_NAMES)):
        name_rva = r.try_u32(names_off + 4 * i)
        if name_rva is None:
            break
        name_off = _rva_to_offset(name_rva, sections, sizeof_headers)
        if name_off is None:
            continue
        raw_name = r.try_cstring(name_off)
        if raw_name is not None:
            names.append(_decode_name(raw_name))
    return tuple(names)


def parse_pe(data: bytes) -> ParsedPE:
    """Parse raw PE file bytes into a :class:`ParsedPE`.

    Raises :class:`MalformedPE` only for unusable core headers; everything
    else degrades to empty/zero values.
    """
    r = _Reader(data)
    if len(data) < 2 or data[0:2] != DOS_MAGIC:
        raise MalformedPE("missing MZ magic", 0)
    if len(data) < 0x40:
        raise MalformedPE("DOS header truncated", 0x3C)
    pe_offset = int.from_bytes(data[0x3C:0x40], "little")
    signature = r.try_bytes(pe_offset, 4)
    if signature is None or signature != PE_SIGNATURE:
        raise MalformedPE("missing PE signature", pe_offset)
    dos = DosHeader(magic=DOS_MAGIC, pe_offset=pe_offset)

    coff_offset = pe_offset + 4
    raw = r.need(coff_offset, 20, "COFF header")
    machine, num_sections, timestamp, _, num_symbols, size_optional, characteristics = \
        struct.unpack("<HHIIIHH", raw)
    coff = CoffHeader(machine=machine, num_sections=num_sections, timestamp=timestamp,
                      characteristics=characteristics, num_symbols=num_symbols)

    opt_offset = coff_offset + 20
    magic = r.try_u16(opt_offset)
    if magic is None or magic not in (PE32_MAGIC, PE32PLUS_MAGIC):
        raise MalformedPE("unsupported Optional Header magic", opt_offset)
    is_plus = magic == PE32PLUS_MAGIC
    fixed_size = 112 if is_plus else 96
    if size_optional < fixed_size:
        raise MalformedPE("Optional Header smaller than its fixed layout", opt_offset)
    raw = r.need(opt_offset, fixed_size, "Optional Header")
    if is_plus:
        fields = struct.unpack("<HBBIIIIIQIIHHHHHHIIIIHHQQQQII", raw)
        (_, major_linker, minor_linker, sizeof_code, _, _, entry_rva, _, _,
         _, _, major_os, minor_os, major_image, minor_image, major_subsys, minor_subsys,
         _, _, sizeof_headers, _, subsystem, dll_characteristics,
         _, _, _, sizeof_heap_commit, _, num_dirs) = fields
    else:
        fields = struct.unpack("<HBBIIIIIIIIIHHHHHHIIIIHHIIIIII", raw)
        (_, major_linker, minor_linker, sizeof_code, _, _, entry_rva, _, _, _,
         _, _, major_os, minor_os, major_image, minor_image, major_subsys, minor_subsys,
         _, _, sizeof_headers, _, subsystem, dll_characteristics,
         _, _, _, sizeof_heap_commit, _, num_dirs) = fields
    optional = OptionalHeader(
        magic=magic,
        subsystem=subsystem,
        dll_characteristics=dll_characteristics,
        major_linker_version=major_linker,
        minor_linker_version=minor_linker,
        major_image_version=major_image,
        minor_image_version=minor_image,
        major_os_version=major_os,
        minor_os_version=minor_os,
        major_subsystem_version=major_subsys,
        minor_subsystem_version=minor_subsys,
        sizeof_code=sizeof_code,
        sizeof_headers=sizeof_headers,
        sizeof_heap_commit=sizeof_heap_commit,
        entry_point_rva=entry_rva,
    )

    # Declared directories beyond 16 are skipped; missing ones are zero-filled.
    directories: list[DataDirectory] = []
    dir_base = opt_offset + fixed_size
    declared = min(num_dirs, NUM_DATA_DIRECTORIES)
    room = max(0, size_optional - fixed_size) // 8
    for i in range(min(declared, room)):
        va = r.try_u32(dir_base + 8 * i)
        size = r.try_u32(dir_base + 8 * i + 4)
        if va is None or size is None:
            break
        directories.append(DataDirectory(virtual_address=va, size=size))
    while len(directories) < NUM_DATA_DIRECTORIES:
        directories.append(DataDirectory(0, 0))

    table_offset = opt_offset + size_optional
    raw = r.need(table_offset, 40 * num_sections, "section table")
    sections: list[Section] = []
    entry_claimed = False
    for i in range(num_sections):
        entry = raw[40 * i:40 * i + 40]
        name_raw = entry[0:8]
        vsize, va, rsize, roffset = struct.unpack("<IIII", entry[8:24])
        sec_characteristics = int.from_bytes(entry[36:40], "little")
        content = r.try_bytes(roffset, rsize)
        if content is None:
            content = data[roffset:] if 0 <= roffset < len(data) else b""
        span = max(vsize, rsize)
        contains_entry = (not entry_claimed) and span > 0 and va <= entry_rva < va + span
        entry_claimed = entry_claimed or contains_entry
        sections.append(Section(
            name=_section_name(name_raw),
            virtual_size=vsize,
            virtual_address=va,
            raw_size=rsize,
            raw_offset=roffset,
            characteristics=sec_characteristics,
            entropy=section_entropy(content),
            contains_entry_point=contains_entry,
        ))
    sections = tuple(sections)

    imports = _parse_imports(r, sections, sizeof_headers, directories[_DIR_IMPORT], is_plus)
    exports = _parse_exports(r, sections, sizeof_headers, directories[_DIR_EXPORT])

    return ParsedPE(
        dos_header=dos,
        coff_header=coff,
        optional_header=optional,
        data_directories=tuple(directories),
        sections=sections,
        imports=imports,
        exports=exports,
    )

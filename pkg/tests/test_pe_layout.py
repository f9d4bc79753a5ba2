"""Pin parser field positions to the documented PE layout.

The crafted-file round-trip tests share struct layouts with the builder, so
they cannot catch a transposed field on their own.  These tests poke bytes
at the offsets published in the Microsoft PE format documentation and
assert the parser sees the change in exactly the right field.
"""

import struct

import pytest

from pemal.pe import parse_pe

from craft import build_pe

PE_OFFSET = 64                 # e_lfanew written by the builder
COFF = PE_OFFSET + 4
OPT = COFF + 20


def poke(data: bytes, offset: int, fmt: str, value: int) -> bytes:
    out = bytearray(data)
    out[offset:offset + struct.calcsize(fmt)] = struct.pack(fmt, value)
    return bytes(out)


@pytest.fixture(scope="module")
def pe32():
    return build_pe().data


@pytest.fixture(scope="module")
def pe32_plus():
    return build_pe(pe32_plus=True).data


class TestCoffOffsets:
    def test_machine_at_0(self, pe32):
        assert parse_pe(poke(pe32, COFF + 0, "<H", 0x8664)).coff_header.machine == 0x8664

    def test_timestamp_at_4(self, pe32):
        assert parse_pe(poke(pe32, COFF + 4, "<I", 777)).coff_header.timestamp == 777

    def test_symbol_count_at_12(self, pe32):
        assert parse_pe(poke(pe32, COFF + 12, "<I", 9)).coff_header.num_symbols == 9

    def test_characteristics_at_18(self, pe32):
        parsed = parse_pe(poke(pe32, COFF + 18, "<H", 0x2002))
        assert parsed.coff_header.characteristics == 0x2002


class TestOptionalHeaderPE32:
    @pytest.mark.parametrize("offset,fmt,field", [
        (4, "<I", "sizeof_code"),
        (16, "<I", "entry_point_rva"),
        (44, "<H", "major_image_version"),
        (46, "<H", "minor_image_version"),
        (40, "<H", "major_os_version"),
        (48, "<H", "major_subsystem_version"),
        (60, "<I", "sizeof_headers"),
        (68, "<H", "subsystem"),
        (70, "<H", "dll_characteristics"),
        (84, "<I", "sizeof_heap_commit"),
    ])
    def test_field_offset(self, pe32, offset, fmt, field):
        parsed = parse_pe(poke(pe32, OPT + offset, fmt, 33))
        assert getattr(parsed.optional_header, field) == 33

    def test_linker_versions_at_2_and_3(self, pe32):
        parsed = parse_pe(poke(poke(pe32, OPT + 2, "<B", 11), OPT + 3, "<B", 22))
        assert parsed.optional_header.major_linker_version == 11
        assert parsed.optional_header.minor_linker_version == 22

    def test_data_directories_start_at_96(self, pe32):
        patched = poke(poke(pe32, OPT + 96 + 8 * 4, "<I", 0x5000),   # certificate rva
                       OPT + 96 + 8 * 4 + 4, "<I", 64)               # certificate size
        parsed = parse_pe(patched)
        assert parsed.data_directories[4].virtual_address == 0x5000
        assert parsed.data_directories[4].size == 64
        assert parsed.has_signature


class TestOptionalHeaderPE32Plus:
    @pytest.mark.parametrize("offset,fmt,field", [
        (4, "<I", "sizeof_code"),
        (16, "<I", "entry_point_rva"),
        (44, "<H", "major_image_version"),
        (60, "<I", "sizeof_headers"),
        (68, "<H", "subsystem"),
        (70, "<H", "dll_characteristics"),
        (96, "<Q", "sizeof_heap_commit"),
    ])
    def test_field_offset(self, pe32_plus, offset, fmt, field):
        parsed = parse_pe(poke(pe32_plus, OPT + offset, fmt, 44))
        assert getattr(parsed.optional_header, field) == 44

    def test_data_directories_start_at_112(self, pe32_plus):
        patched = poke(poke(pe32_plus, OPT + 112 + 8 * 9, "<I", 0x6000),   # TLS rva
                       OPT + 112 + 8 * 9 + 4, "<I", 24)
        parsed = parse_pe(patched)
        assert parsed.data_directories[9].virtual_address == 0x6000
        assert parsed.has_tls


class TestSectionEntryOffsets:
    def test_fields(self, pe32):
        # single .text section: table entry directly after 16 directories
        entry = OPT + 96 + 16 * 8
        parsed = parse_pe(poke(pe32, entry + 8, "<I", 0x777))     # VirtualSize
        assert parsed.sections[0].virtual_size == 0x777
        parsed = parse_pe(poke(pe32, entry + 16, "<I", 0x200))    # SizeOfRawData
        assert parsed.sections[0].raw_size == 0x200
        parsed = parse_pe(poke(pe32, entry + 36, "<I", 0xC0000040))
        assert parsed.sections[0].characteristics == 0xC0000040
        assert "MEM_WRITE" in parsed.sections[0].characteristic_names

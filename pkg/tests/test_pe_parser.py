import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pemal.errors import MalformedPE
from pemal.pe import parse_pe, section_entropy

from craft import SectionSpec, build_pe


class TestCoreHeaderErrors:
    def test_empty_input(self):
        with pytest.raises(MalformedPE) as exc:
            parse_pe(b"")
        assert exc.value.offset == 0

    def test_missing_mz_magic(self):
        with pytest.raises(MalformedPE) as exc:
            parse_pe(b"ZZ" + b"\x00" * 100)
        assert exc.value.offset == 0

    def test_truncated_dos_header(self):
        with pytest.raises(MalformedPE) as exc:
            parse_pe(b"MZ" + b"\x00" * 10)
        assert exc.value.offset == 0x3C

    def test_missing_pe_signature(self):
        data = bytearray(b"MZ" + b"\x00" * 62)
        data[0x3C:0x40] = struct.pack("<I", 0x40)
        data += b"XX\x00\x00" + b"\x00" * 64
        with pytest.raises(MalformedPE) as exc:
            parse_pe(bytes(data))
        assert exc.value.offset == 0x40

    def test_pe_signature_out_of_bounds(self):
        data = bytearray(b"MZ" + b"\x00" * 62)
        data[0x3C:0x40] = struct.pack("<I", 0x10000)
        with pytest.raises(MalformedPE) as exc:
            parse_pe(bytes(data))
        assert exc.value.offset == 0x10000

    def test_truncated_coff(self):
        crafted = build_pe()
        with pytest.raises(MalformedPE):
            parse_pe(crafted.data[:70])

    def test_truncated_optional_header(self):
        crafted = build_pe()
        with pytest.raises(MalformedPE):
            parse_pe(crafted.data[:100])

    def test_bad_optional_magic(self):
        data = bytearray(build_pe().data)
        data[88:90] = struct.pack("<H", 0x107)      # ROM image magic
        with pytest.raises(MalformedPE) as exc:
            parse_pe(bytes(data))
        assert exc.value.offset == 88

    def test_section_table_past_eof(self):
        crafted = build_pe()
        # bump the declared section count far beyond the file
        data = bytearray(crafted.data)
        data[64 + 4 + 2:64 + 4 + 4] = struct.pack("<H", 2000)
        with pytest.raises(MalformedPE):
            parse_pe(bytes(data))


class TestMinimalRoundTrip:
    def test_minimal_pe_fields(self):
        crafted = build_pe(timestamp=1600000000, num_symbols=7,
                           image_version=(3, 4), linker_version=(14, 2),
                           os_version=(6, 1), subsystem_version=(6, 3),
                           sizeof_heap_commit=0x2000)
        parsed = parse_pe(crafted.data)
        assert parsed.dos_header.pe_offset == 64
        assert parsed.coff_header.num_sections == 1
        assert len(parsed.sections) == parsed.coff_header.num_sections
        assert parsed.coff_header.timestamp == 1600000000
        assert parsed.coff_header.num_symbols == 7
        assert parsed.coff_header.machine == 0x14C

        opt = parsed.optional_header
        assert opt.magic == 0x10B
        assert opt.major_image_version == 3 and opt.minor_image_version == 4
        assert opt.major_linker_version == 14 and opt.minor_linker_version == 2
        assert opt.major_os_version == 6 and opt.minor_os_version == 1
        assert opt.major_subsystem_version == 6 and opt.minor_subsystem_version == 3
        assert opt.sizeof_heap_commit == 0x2000
        assert opt.sizeof_code == crafted.sizeof_code
        assert opt.sizeof_headers == crafted.sizeof_headers
        assert opt.subsystem == 3

        section = parsed.sections[0]
        assert section.name == ".text"
        assert section.raw_size == 512
        assert section.virtual_address == crafted.section_vas[0]
        assert section.raw_offset == crafted.section_raw_offsets[0]
        assert parsed.imports == ()
        assert parsed.exports == ()

    def test_pe32_plus_round_trip(self):
        crafted = build_pe(pe32_plus=True, machine=0x8664, sizeof_heap_commit=0x3000)
        parsed = parse_pe(crafted.data)
        assert parsed.optional_header.magic == 0x20B
        assert parsed.coff_header.machine == 0x8664
        assert parsed.optional_header.sizeof_heap_commit == 0x3000
        assert parsed.sections[0].name == ".text"

    def test_data_directories_zero_filled_to_16(self):
        parsed = parse_pe(build_pe().data)
        assert len(parsed.data_directories) == 16
        assert all(d.virtual_address == 0 and d.size == 0 for d in parsed.data_directories)

    def test_directory_entry_read_back(self):
        # import directory entry at rva 0x2000, size 40
        crafted = build_pe(dir_overrides={1: (0x2000, 40)})
        parsed = parse_pe(crafted.data)
        assert parsed.data_directories[1].virtual_address == 0x2000
        assert parsed.data_directories[1].size == 40

    def test_presence_flags(self):
        crafted = build_pe(dir_overrides={2: (0x5000, 16), 6: (0x5100, 8), 9: (0x5200, 4)})
        parsed = parse_pe(crafted.data)
        assert parsed.has_resources and parsed.has_debug and parsed.has_tls
        assert not parsed.has_relocations and not parsed.has_signature

    def test_determinism(self):
        crafted = build_pe(imports={"a.dll": ["f"]}, exports=["g"])
        assert parse_pe(crafted.data) == parse_pe(crafted.data)


class TestSections:
    def test_name_truncated_at_first_nul(self):
        crafted = build_pe(sections=[SectionSpec(name=b".t\x00xyz", data=b"A" * 32)])
        parsed = parse_pe(crafted.data)
        assert parsed.sections[0].name == ".t"

    def test_non_utf8_name_bytes_survive(self):
        crafted = build_pe(sections=[SectionSpec(name=b".x\xff\xfe", data=b"A" * 32)])
        parsed = parse_pe(crafted.data)
        name = parsed.sections[0].name
        assert name.encode("utf-8", "surrogateescape") == b".x\xff\xfe"

    def test_entropy_matches_raw_content(self):
        content = bytes(range(256)) * 2
        crafted = build_pe(sections=[SectionSpec(name=b".d", data=content)])
        parsed = parse_pe(crafted.data)
        raw = crafted.data[crafted.section_raw_offsets[0]:
                           crafted.section_raw_offsets[0] + crafted.section_raw_sizes[0]]
        assert parsed.sections[0].entropy == section_entropy(raw)

    def test_at_most_one_entry_point_section(self):
        crafted = build_pe(sections=[SectionSpec(name=b".a", data=b"A" * 64),
                                     SectionSpec(name=b".b", data=b"B" * 64)])
        parsed = parse_pe(crafted.data)
        assert sum(s.contains_entry_point for s in parsed.sections) == 1
        assert parsed.entry_section.name == ".a"

    def test_entry_point_outside_all_sections(self):
        crafted = build_pe(entry_rva=0x900000)
        parsed = parse_pe(crafted.data)
        assert parsed.entry_section is None

    def test_entropy_bounds_on_all_sections(self):
        crafted = build_pe(sections=[SectionSpec(name=b".r", data=bytes(251 * i % 256 for i in range(700)))])
        parsed = parse_pe(crafted.data)
        for s in parsed.sections:
            assert 0.0 <= s.entropy <= 8.0


class TestImportsExports:
    def test_import_round_trip(self):
        crafted = build_pe(imports={
            "KERNEL32.dll": ["ExitProcess", "CreateFileA"],
            "user32.dll": ["MessageBoxA", 7],
        })
        parsed = parse_pe(crafted.data)
        as_dict = {lib.name: lib.functions for lib in parsed.imports}
        assert as_dict == {
            "KERNEL32.dll": ("ExitProcess", "CreateFileA"),
            "user32.dll": ("MessageBoxA", "ordinal7"),
        }

    def test_import_round_trip_pe32_plus(self):
        crafted = build_pe(pe32_plus=True, imports={"ntdll.dll": ["NtClose", 42]})
        parsed = parse_pe(crafted.data)
        assert parsed.imports[0].functions == ("NtClose", "ordinal42")

    def test_export_round_trip(self):
        crafted = build_pe(exports=["DllMain", "GetWidget", "SetWidget"])
        parsed = parse_pe(crafted.data)
        assert parsed.exports == ("DllMain", "GetWidget", "SetWidget")

    def test_corrupt_import_directory_degrades_to_empty(self):
        # directory points at an unmapped rva: parsing succeeds, imports empty
        crafted = build_pe(dir_overrides={1: (0x700000, 40)})
        parsed = parse_pe(crafted.data)
        assert parsed.imports == ()

    def test_corrupt_export_directory_degrades_to_empty(self):
        crafted = build_pe(dir_overrides={0: (0x700000, 40)})
        parsed = parse_pe(crafted.data)
        assert parsed.exports == ()

    def test_garbage_inside_import_section_degrades(self):
        crafted = build_pe(imports={"a.dll": ["f"]})
        data = bytearray(crafted.data)
        # wreck the whole .idata payload
        start = crafted.section_raw_offsets[1]
        data[start:start + 64] = b"\xFF" * 64
        parsed = parse_pe(bytes(data))
        assert parsed.imports == ()


class TestEntropy:
    def test_constant_bytes(self):
        assert section_entropy(b"\x00" * 1024) == 0.0

    def test_uniform_bytes(self):
        assert section_entropy(bytes(range(256))) == 8.0

    def test_two_symbols(self):
        assert section_entropy(b"aabb") == 1.0

    def test_empty(self):
        assert section_entropy(b"") == 0.0

    @given(st.binary(max_size=512))
    @settings(max_examples=60, deadline=None)
    def test_bounds(self, data):
        assert 0.0 <= section_entropy(data) <= 8.0

    @given(st.binary(min_size=1, max_size=256))
    @settings(max_examples=60, deadline=None)
    def test_self_concat_invariant(self, data):
        assert section_entropy(data + data) == section_entropy(data)


class TestFuzz:
    def test_mutations_never_crash(self):
        base = bytearray(build_pe(imports={"k.dll": ["f", "g"]}, exports=["e"]).data)
        rng = np.random.default_rng(1234)
        for _ in range(300):
            mutant = bytearray(base)
            for _ in range(rng.integers(1, 9)):
                mutant[rng.integers(0, len(mutant))] = rng.integers(0, 256)
            kind = rng.integers(0, 4)
            if kind == 1:
                mutant = mutant[:rng.integers(0, len(mutant))]
            elif kind == 2:
                mutant += bytes(rng.integers(0, 256, size=rng.integers(1, 600), dtype=np.uint8))
            try:
                parsed = parse_pe(bytes(mutant))
                assert len(parsed.data_directories) == 16
                assert sum(s.contains_entry_point for s in parsed.sections) <= 1
            except MalformedPE as exc:
                assert 0 <= exc.offset <= len(mutant) + 0x10000

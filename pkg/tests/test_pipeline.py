import os

import numpy as np
import pytest

from eqkit import pipeline
from eqkit.errors import (
    CollisionWithoutForce,
    EmptyShotDirectory,
    IllegalSourceForProfile,
    MissingSourceFile,
    OrphanImport,
    RaggedLists,
    WorkdirLocked,
    ZeroComputedCurrent,
)
from eqkit.formats import read_exptnz, read_namelist
from eqkit.pipeline import (
    NAMELIST_DEFAULTS,
    ImportedProfiles,
    NamelistSpec,
    RunConfig,
    SourceSelection,
    archive_iteration,
    archived_iterations,
    assemble_inputs,
    clean_workdir,
    create_namelist,
    current_correction,
    pressure_correction,
    resolve_shot,
    run_iterations,
)

SMALL_NAMELIST = {"NS": 49, "NT": 49, "NISO": 16, "NPSI": 32, "NCHI": 96,
                  "NRBOX": 49, "NZBOX": 49}


def small_spec(**over):
    vals = dict(SMALL_NAMELIST)
    vals.update({"NSTTP": 3, "NPROPT": 3})
    vals.update(over)
    return NamelistSpec(vals)


def standard_selection(**over):
    kw = dict(eprofiles_src="exptnz", iprofiles_src="exptnz",
              pressure_src="eqdsk", current_src="expeq",
              rhomesh_src="eqdsk", iterTotal=1)
    kw.update(over)
    return SourceSelection(**kw)


class TestNamelist:
    def test_defaults_table(self):
        expected = {
            "NS": 256, "NT": 256, "NISO": 256, "NPSI": 1024, "NCHI": 1024,
            "NRBOX": 60, "NZBOX": 60, "RELAX": 0.0, "NSTTP": 1,
            "NPROPT": 3, "NPPFUN": 8, "NEQDSK": 0, "TENSBND": 0,
            "COCOS_IN": 2, "TENSPROF": 0, "COCOS_OUT": 12, "NRHOMESH": 0,
        }
        assert NAMELIST_DEFAULTS == expected
        assert len(NAMELIST_DEFAULTS) == 17

    def test_empty_spec_reproduces_defaults(self, tmp_path):
        path = tmp_path / "chease_namelist"
        create_namelist(NamelistSpec(), 0, str(path))
        assert read_namelist(str(path)) == NAMELIST_DEFAULTS

    def test_list_indexing_with_clamp(self):
        spec = NamelistSpec({"NSTTP": [1, 3], "NS": [128, 128]})
        assert spec.value_at("NSTTP", 0) == 1
        assert spec.value_at("NSTTP", 1) == 3
        assert spec.value_at("NSTTP", 5) == 3
        # unset parameters fall back to defaults
        assert spec.value_at("NPPFUN", 5) == 8

    def test_mixed_scalar_list_rejected(self):
        with pytest.raises(RaggedLists):
            NamelistSpec({"NS": [128, 256], "NT": 128})

    def test_unequal_lists_rejected(self):
        with pytest.raises(RaggedLists):
            NamelistSpec({"NS": [128, 256], "NT": [128, 256, 512]})

    def test_passthrough_extras(self, tmp_path):
        spec = NamelistSpec({"EPSLON": 1e-10})
        params = spec.params_at(0)
        assert params["EPSLON"] == 1e-10
        path = tmp_path / "nml"
        create_namelist(spec, 0, str(path))
        assert read_namelist(str(path))["EPSLON"] == 1e-10

    def test_clamping_property(self, rng):
        for _ in range(50):
            length = int(rng.integers(1, 6))
            values = [int(v) for v in rng.integers(1, 99, length)]
            spec = NamelistSpec({"NS": values, "NT": values})
            for i in range(10):
                assert spec.value_at("NS", i) == values[min(i, length - 1)]


class TestSourceCodes:
    def test_names_and_numbers(self):
        sel = SourceSelection(eprofiles_src="profiles", iprofiles_src=4,
                              pressure_src=1, current_src="expeq")
        assert sel.source_at("eprofiles", 0) == 4
        assert sel.source_at("pressure", 0) == 1
        assert sel.source_at("current", 0) == 2

    def test_code_six_rejected(self):
        with pytest.raises(IllegalSourceForProfile):
            SourceSelection(pressure_src=6)

    def test_per_profile_legality(self):
        with pytest.raises(IllegalSourceForProfile):
            SourceSelection(eprofiles_src="expeq")      # 2 not kinetic
        with pytest.raises(IllegalSourceForProfile):
            SourceSelection(current_src="profiles")     # 4 not a current
        with pytest.raises(IllegalSourceForProfile):
            SourceSelection(rhomesh_src="exptnz")       # 3 lacks both grids

    def test_iteration_list_clamping(self):
        sel = SourceSelection(pressure_src=["eqdsk", "expeq"])
        assert sel.source_at("pressure", 0) == 1
        assert sel.source_at("pressure", 1) == 2
        assert sel.source_at("pressure", 9) == 2


class TestImportedProfiles:
    def test_requires_both_grids(self):
        with pytest.raises(OrphanImport):
            ImportedProfiles({"Te": np.ones(8)})
        with pytest.raises(OrphanImport):
            ImportedProfiles({"Te": np.ones(8), "rhopsi": np.linspace(0, 1, 8)})

    def test_unknown_key(self):
        with pytest.raises(OrphanImport):
            ImportedProfiles({"rhopsi": np.linspace(0, 1, 8),
                              "rhotor": np.linspace(0, 1, 8),
                              "banana": np.ones(8)})

    def test_grids_alone_are_fine(self):
        imp = ImportedProfiles({"rhopsi": np.linspace(0, 1, 8),
                                "rhotor": np.linspace(0, 1, 8)})
        assert not imp  # no profile overrides


class TestResolveShot:
    def test_finds_typed_files(self, shot_dir):
        files = resolve_shot(shot_dir)
        assert set(files) == {"EQDSK", "EXPEQ", "EXPTNZ", "ITERDB",
                              "PROFILES"}

    def test_wrong_prefix_skipped_with_warning(self, tmp_path, caplog):
        import logging
        d = tmp_path / "SHOT_9"
        d.mkdir()
        (d / "SHOT_9_EQDSK").write_text("x")
        (d / "OTHER_EQDSK").write_text("x")
        (d / "SHOT_9_BANANA").write_text("x")
        with caplog.at_level(logging.WARNING):
            files = resolve_shot(str(d))
        assert list(files) == ["EQDSK"]
        assert sum("skipping" in r.message for r in caplog.records) == 2

    def test_empty_directory(self, tmp_path):
        d = tmp_path / "EMPTY_1"
        d.mkdir()
        with pytest.raises(EmptyShotDirectory):
            resolve_shot(str(d))


class TestCorrections:
    def test_identity_at_matched_current(self):
        prof = np.linspace(1, 2, 9)
        assert np.allclose(current_correction(prof, 1e6, 1e6), prof)
        assert np.allclose(pressure_correction(prof, 1e6, 1e6), prof)

    def test_ratio_two_doubles(self):
        prof = np.linspace(1, 2, 9)
        assert np.allclose(current_correction(prof, 5e5, 1e6), 2 * prof)

    def test_sign_preserved(self):
        prof = -np.linspace(1, 2, 9)
        out = pressure_correction(prof, 5e5, 1e6)
        assert np.all(out < 0)

    def test_zero_computed(self):
        with pytest.raises(ZeroComputedCurrent):
            current_correction(np.ones(4), 0.0, 1e6)


class TestArchive:
    def make_files(self, d):
        for name in ("EXPEQ", "EXPEQ.OUT", "EXPTNZ", "EXPTNZ.OUT",
                     "chease_namelist", "chease.dat"):
            (d / name).write_text(name)

    def test_renames_with_padding(self, tmp_path):
        self.make_files(tmp_path)
        archive_iteration(str(tmp_path), 0)
        assert (tmp_path / "EXPEQ_iter000").exists()
        assert (tmp_path / "EXPEQ_iter000.OUT").exists()
        assert (tmp_path / "chease_iter000.dat").exists()
        self.make_files(tmp_path)
        archive_iteration(str(tmp_path), 12)
        assert (tmp_path / "EXPTNZ_iter012.OUT").exists()
        assert archived_iterations(str(tmp_path)) == [0, 12]

    def test_collision_without_force(self, tmp_path):
        self.make_files(tmp_path)
        archive_iteration(str(tmp_path), 0)
        self.make_files(tmp_path)
        with pytest.raises(CollisionWithoutForce):
            archive_iteration(str(tmp_path), 0)
        archive_iteration(str(tmp_path), 0, force=True)

    def test_clean_selective(self, tmp_path):
        self.make_files(tmp_path)
        archive_iteration(str(tmp_path), 0)
        self.make_files(tmp_path)
        (tmp_path / "run_report").write_text("#\n")
        clean_workdir(str(tmp_path), inputs=False, outputs=True)
        assert (tmp_path / "EXPEQ").exists()
        assert (tmp_path / "chease_namelist").exists()
        assert not (tmp_path / "EXPEQ.OUT").exists()
        assert not (tmp_path / "chease_iter000.dat").exists()
        clean_workdir(str(tmp_path), inputs=True, outputs=True)
        assert not (tmp_path / "EXPEQ").exists()


class TestAssembleInputs:
    def test_example_one_wiring(self, shot_dir, tmp_path):
        sel = SourceSelection(eprofiles_src="exptnz",
                              iprofiles_src="profiles",
                              pressure_src="eqdsk", current_src="expeq",
                              rhomesh_src="eqdsk")
        out = assemble_inputs(sel, ImportedProfiles(),
                              resolve_shot(shot_dir), 0, str(tmp_path),
                              NamelistSpec().params_at(0) | SMALL_NAMELIST
                              | {"NSTTP": 3})
        assert out.expeq.nsttp == 3
        assert out.expeq.grid.size == 65  # the eqdsk rhomesh grid
        assert out.exptnz["Te"].size == 65

    def test_native_grids_without_rhomesh(self, shot_dir, tmp_path):
        sel = SourceSelection(eprofiles_src="exptnz",
                              iprofiles_src="exptnz",
                              pressure_src="eqdsk", current_src="eqdsk",
                              rhomesh_src=None)
        out = assemble_inputs(sel, ImportedProfiles(),
                              resolve_shot(shot_dir), 0, str(tmp_path),
                              NamelistSpec().params_at(0))
        # exptnz keeps its own 64-point grid; expeq keeps eqdsk's 65
        assert out.exptnz["Te"].size == 64
        assert out.expeq.grid.size == 65
        assert out.expeq.nsttp == 1  # default NSTTP with eqdsk ffprime

    def test_imported_override_at_iteration_zero(self, shot_dir, tmp_path):
        # import on the rhomesh (eqdsk) grid itself, so the override lands
        # with no interpolation error
        files = resolve_shot(shot_dir)
        from eqkit.formats import read_eqdsk
        res = read_eqdsk(files["EQDSK"])
        native = read_exptnz(files["EXPTNZ"], eqdsk=files["EQDSK"])
        te_imp = 1.2 * native["Te"]
        imp = ImportedProfiles({"rhopsi": res.grid.rhopsi,
                                "rhotor": res.grid.rhotor, "Te": te_imp})
        sel = standard_selection()
        params = NamelistSpec().params_at(0) | SMALL_NAMELIST | {"NSTTP": 3}
        out0 = assemble_inputs(sel, imp, files, 0, str(tmp_path), params)
        assert out0.exptnz["Te"].size == te_imp.size
        assert np.allclose(out0.exptnz["Te"], te_imp, rtol=1e-6)

    def test_import_ignored_after_iteration_zero(self, shot_dir, tmp_path):
        files = resolve_shot(shot_dir)
        native = read_exptnz(files["EXPTNZ"])
        imp = ImportedProfiles({"rhopsi": native["rhopsi"],
                                "rhotor": native["rhopsi"],
                                "Te": 5.0 * native["Te"]})
        sel = standard_selection()
        params = NamelistSpec().params_at(0) | SMALL_NAMELIST | {"NSTTP": 3}
        out1 = assemble_inputs(sel, imp, files, 1, str(tmp_path), params)
        # no prior outputs exist, so iteration 1 reads the shot files and
        # must NOT apply the import
        scale = np.max(out1.exptnz["Te"]) / np.max(native["Te"])
        assert scale == pytest.approx(1.0, rel=1e-6)

    def test_common_mistake_warning(self, shot_dir, tmp_path, caplog):
        import logging
        files = resolve_shot(shot_dir)
        native = read_exptnz(files["EXPTNZ"])
        imp = ImportedProfiles({"rhopsi": native["rhopsi"],
                                "rhotor": native["rhopsi"],
                                "Te": 1.1 * native["Te"]})
        sel = standard_selection()
        params = NamelistSpec().params_at(0) | SMALL_NAMELIST | {"NSTTP": 3}
        with caplog.at_level(logging.WARNING):
            out = assemble_inputs(sel, imp, files, 0, str(tmp_path), params)
        assert out.warnings
        assert "pressure" in out.warnings[0]

    def test_deterministic_bytes(self, shot_dir, tmp_path):
        from eqkit.formats import write_expeq, write_exptnz
        sel = standard_selection()
        params = NamelistSpec().params_at(0) | SMALL_NAMELIST | {"NSTTP": 3}
        files = resolve_shot(shot_dir)
        paths = []
        for tag in ("a", "b"):
            out = assemble_inputs(sel, ImportedProfiles(), files, 0,
                                  str(tmp_path), params)
            pe = tmp_path / f"EXPEQ_{tag}"
            pt = tmp_path / f"EXPTNZ_{tag}"
            write_expeq(out.expeq, str(pe))
            write_exptnz(out.exptnz, str(pt))
            paths.append((pe.read_bytes(), pt.read_bytes()))
        assert paths[0] == paths[1]

    def test_missing_source_file(self, shot_dir, tmp_path):
        sel = SourceSelection(eprofiles_src="iterdb", iprofiles_src="iterdb",
                              pressure_src="chease", current_src="chease")
        with pytest.raises(MissingSourceFile):
            assemble_inputs(sel, ImportedProfiles(), resolve_shot(shot_dir),
                            0, str(tmp_path), NamelistSpec().params_at(0))


class TestRunLoop:
    def run_mode1(self, shot_dir, workdir, iters=2):
        sel = standard_selection(iterTotal=iters)
        cfg = RunConfig(workdir=str(workdir), shotpath=shot_dir,
                        cheasemode=1)
        return run_iterations(cfg, sel, small_spec())

    def test_mode1_archives_gapless(self, shot_dir, tmp_path):
        report = self.run_mode1(shot_dir, tmp_path, iters=2)
        assert report.iterations_run == 2
        assert archived_iterations(str(tmp_path)) == [0, 1]
        for it in (0, 1):
            for pattern in ("EXPEQ_iter{:03d}", "EXPEQ_iter{:03d}.OUT",
                            "EXPTNZ_iter{:03d}", "EXPTNZ_iter{:03d}.OUT",
                            "chease_iter{:03d}.dat"):
                assert (tmp_path / pattern.format(it)).exists()

    def test_resume_continues_numbering(self, shot_dir, tmp_path):
        self.run_mode1(shot_dir, tmp_path, iters=2)
        self.run_mode1(shot_dir, tmp_path, iters=1)
        assert archived_iterations(str(tmp_path)) == [0, 1, 2]

    def test_removeoutputs_restarts(self, shot_dir, tmp_path):
        self.run_mode1(shot_dir, tmp_path, iters=1)
        sel = standard_selection(iterTotal=1)
        cfg = RunConfig(workdir=str(tmp_path), shotpath=shot_dir,
                        cheasemode=1, removeoutputs=True)
        run_iterations(cfg, sel, small_spec())
        assert archived_iterations(str(tmp_path)) == [0]

    def test_lock_excludes_second_run(self, shot_dir, tmp_path):
        (tmp_path / ".eqkit.lock").write_text("held\n")
        with pytest.raises(WorkdirLocked):
            self.run_mode1(shot_dir, tmp_path, iters=1)

    def test_runmode3_cleans(self, shot_dir, tmp_path):
        self.run_mode1(shot_dir, tmp_path, iters=1)
        cfg = RunConfig(workdir=str(tmp_path), runmode=3)
        run_iterations(cfg, standard_selection(), small_spec())
        assert archived_iterations(str(tmp_path)) == []
        assert not (tmp_path / "EQDSK").exists()

    def test_removeinputs_requires_shotpath(self):
        with pytest.raises(MissingSourceFile):
            RunConfig(removeinputs=True)

    def test_determinism_byte_identical(self, shot_dir, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir(), b.mkdir()
        self.run_mode1(shot_dir, a, iters=1)
        self.run_mode1(shot_dir, b, iters=1)
        for name in ("EXPEQ_iter000", "EXPEQ_iter000.OUT",
                     "EXPTNZ_iter000", "EXPTNZ_iter000.OUT",
                     "chease_iter000.dat", "run_report"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestIterationDiff:
    def test_mode2_diff_isolates_changed_profiles(self, shot_dir, tmp_path):
        # two forced correction iterations: the rescaled current family
        # changes between bundles while the held pressure and kinetic
        # blocks stay bit-identical
        from eqkit.errors import TargetNotReached
        from eqkit.formats import read_chease, read_eqdsk

        i0 = read_eqdsk(os.path.join(
            shot_dir, os.path.basename(shot_dir) + "_EQDSK")).file.current
        sel = standard_selection(iterTotal=2)
        cfg = RunConfig(workdir=str(tmp_path), shotpath=shot_dir,
                        cheasemode=2, current_tol=1e-12,
                        target_current=1.1 * i0)
        with pytest.raises(TargetNotReached):
            run_iterations(cfg, sel, small_spec())
        b0 = read_chease(str(tmp_path / "chease_iter000.dat"))
        b1 = read_chease(str(tmp_path / "chease_iter001.dat"))

        def rel_change(key):
            a, c = np.atleast_1d(b0[key]), np.atleast_1d(b1[key])
            return np.max(np.abs(a - c)) / np.max(np.abs(a))

        # Held profiles re-enter through refreshed outputs: the boundary
        # is bitwise stable, pressure matches at format precision, and the
        # kinetic profiles only carry interpolation-route noise (largest
        # at their steep edge).  The corrected family moves by the full
        # rescale ratio; pprime belongs there because dp/dpsi rescales
        # through the new equilibrium's flux span even with p(psi_N) held.
        assert np.array_equal(b0["rbound"], b1["rbound"])
        assert np.array_equal(b0["zbound"], b1["zbound"])
        assert rel_change("pressure") < 1e-8
        rho = b0["rhopsi"]
        for key in ("Te", "ne"):
            inner = np.max(np.abs((b0[key] - b1[key])[rho <= 0.9])) \
                / np.max(np.abs(b0[key]))
            assert inner < 1e-3, key
            assert rel_change(key) < 1e-2, key
        for changed in ("Iprl", "ffprime", "pprime", "ITEXP"):
            assert rel_change(changed) > 5e-2, changed

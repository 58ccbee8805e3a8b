use std::path::{Path, PathBuf};
use std::process::Command;

use corehole::units::hartree_to_ev;
use corehole_cli::run::{load_run, RunManifest};
use corehole_cli::{compare, run_job, CompareOptions, RunConfig};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corehole"))
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn hubbard_fci_reports_the_analytic_poles() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&fixture("hubbard_fci.toml")).unwrap();
    let summary = run_job(&cfg, tmp.path()).unwrap();
    // E0 = 2 − 2√2; the one-electron sector has bonding/antibonding levels ∓1
    let e0 = 2.0 - 2.0 * 2f64.sqrt();
    let want = [hartree_to_ev(e0 - 1.0), hartree_to_ev(e0 + 1.0)];
    let rows = &summary.peaks.peaks;
    assert_eq!(rows.len(), 2);
    for (row, w) in rows.iter().zip(want) {
        assert!((row.energy_ev - w).abs() < 1e-9, "{} vs {w}", row.energy_ev);
    }
    let total: f64 = rows.iter().map(|r| r.weight).sum();
    // ⟨Ψ₀|n_0α|Ψ₀⟩ = ½ at half filling
    assert!((total - 0.5).abs() < 1e-12);
}

#[test]
fn binary_run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", "--config"])
        .arg(fixture("two_orbital_fci.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for name in [
        "spectrum.tsv",
        "spectrum.json",
        "peaks.json",
        "config.toml",
        "manifest.json",
    ] {
        assert!(tmp.path().join(name).is_file(), "{name} missing");
    }
    let tsv = String::from_utf8(read(tmp.path(), "spectrum.tsv")).unwrap();
    assert!(tsv.starts_with('#'));
}

#[test]
fn qpe_runs_are_byte_identical_for_a_fixed_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&fixture("hubbard_qpe.toml")).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_job(&cfg, &a).unwrap();
    run_job(&cfg, &b).unwrap();
    for name in [
        "peaks.json",
        "spectrum.tsv",
        "spectrum.json",
        "campaign.json",
        "config.toml",
    ] {
        assert_eq!(read(&a, name), read(&b, name), "{name} differs");
    }
    let mut other = cfg.clone();
    other.qpe.seed += 1;
    let c = tmp.path().join("c");
    run_job(&other, &c).unwrap();
    assert_ne!(read(&a, "campaign.json"), read(&c, "campaign.json"));
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let ok = bin()
        .args(["run", "--seed", "99", "--config"])
        .arg(fixture("hubbard_qpe.toml"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(ok.success());
    let (manifest, _, _) = load_run(&out).unwrap();
    assert_eq!(manifest.config.qpe.seed, 99);
}

#[test]
fn manifest_config_reproduces_the_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let cfg = RunConfig::load(&fixture("random_ci.toml")).unwrap();
    run_job(&cfg, &first).unwrap();
    let manifest: RunManifest = serde_json::from_slice(&read(&first, "manifest.json")).unwrap();
    let second = tmp.path().join("second");
    run_job(&manifest.config, &second).unwrap();
    for name in &manifest.artifacts {
        assert_eq!(read(&first, name), read(&second, name), "{name} differs");
    }
    // the echoed config is itself a valid config file
    let echoed =
        RunConfig::from_toml(&String::from_utf8(read(&first, "config.toml")).unwrap()).unwrap();
    assert_eq!(echoed, manifest.config);
}

#[test]
fn comparing_a_run_with_itself_gives_zero_discrepancy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::load(&fixture("random_ci.toml")).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_job(&cfg, &a).unwrap();
    run_job(&cfg, &b).unwrap();
    let opts = CompareOptions {
        shift: 4.3,
        broaden: Some(1.0),
        out: Some(tmp.path().join("cmp")),
        ..Default::default()
    };
    let report = compare(&[a, b], &opts).unwrap();
    for d in report
        .discrepancies
        .iter()
        .chain(&report.overlay_discrepancies)
    {
        assert!(d.matched > 0);
        assert_eq!(d.max_abs_energy_ev, 0.0);
        assert_eq!(d.max_abs_weight, 0.0);
    }
    assert!(tmp.path().join("cmp/comparison.json").is_file());
    assert!(tmp.path().join("cmp/overlay.tsv").is_file());
}

#[test]
fn compare_refuses_runs_on_different_integrals() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_job(&RunConfig::load(&fixture("hubbard_fci.toml")).unwrap(), &a).unwrap();
    run_job(
        &RunConfig::load(&fixture("two_orbital_fci.toml")).unwrap(),
        &b,
    )
    .unwrap();
    let out = bin()
        .arg("compare")
        .arg(&a)
        .arg(&b)
        .arg("--out")
        .arg(tmp.path().join("c"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let forced = bin()
        .arg("compare")
        .arg(&a)
        .arg(&b)
        .arg("--force")
        .arg("--out")
        .arg(tmp.path().join("c"))
        .output()
        .unwrap();
    assert!(
        forced.status.success(),
        "{}",
        String::from_utf8_lossy(&forced.stderr)
    );
}

#[test]
fn exit_codes_distinguish_config_and_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(
        &bad,
        "[run]\nintegrals = \"x.fcidump\"\nmethod = \"fci\"\nunknown = 3\n",
    )
    .unwrap();
    let code = |cfg: &Path| {
        bin()
            .arg("run")
            .arg("--config")
            .arg(cfg)
            .arg("--out")
            .arg(tmp.path().join("o"))
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(code(&bad), Some(2));

    let missing = tmp.path().join("missing.toml");
    std::fs::write(
        &missing,
        "[run]\nintegrals = \"nowhere.fcidump\"\nmethod = \"fci\"\n",
    )
    .unwrap();
    assert_eq!(code(&missing), Some(4));
    assert_eq!(code(&tmp.path().join("absent.toml")), Some(4));

    let garbled = tmp.path().join("garbled.fcidump");
    std::fs::write(&garbled, "&FCI NORB=2 NELEC=2\n&END\nnot numbers\n").unwrap();
    let cfg = tmp.path().join("garbled.toml");
    std::fs::write(
        &cfg,
        "[run]\nintegrals = \"garbled.fcidump\"\nmethod = \"fci\"\n",
    )
    .unwrap();
    assert_eq!(code(&cfg), Some(2));

    let range = tmp.path().join("range.toml");
    std::fs::write(
        &range,
        format!(
            "[run]\nintegrals = {:?}\nmethod = \"fci\"\n[trial]\nannihilate = 9\n",
            fixture("hubbard_dimer.fcidump")
        ),
    )
    .unwrap();
    assert_eq!(code(&range), Some(2));
}

#[test]
fn rtcc_fixture_checkpoint_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&fixture("random_rtcc.toml")).unwrap();
    cfg.rtcc.t_max = 20.0;
    let full = tmp.path().join("full");
    run_job(&cfg, &full).unwrap();

    let mut half = cfg.clone();
    half.rtcc.t_max = 10.0;
    let first = tmp.path().join("first");
    run_job(&half, &first).unwrap();
    let mut rest = cfg.clone();
    rest.rtcc.resume = Some(first.join("trajectory.chk"));
    let resumed = tmp.path().join("resumed");
    run_job(&rest, &resumed).unwrap();
    let (_, _, a) = load_run(&full).unwrap();
    let (_, _, b) = load_run(&resumed).unwrap();
    assert_eq!(a.grid, b.grid);
    let top = a.values.iter().copied().fold(0.0, f64::max);
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-6 * top);
    }
}

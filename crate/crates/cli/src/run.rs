//! One configured job: solve, emit spectrum/peak artifacts and a manifest.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use corehole::ci_solver::{
    build_hamiltonian_capped, ground_state, lanczos_from_vector, solve_dense_capped,
    SectorHamiltonian,
};
use corehole::fock_space::{enumerate_space, CISpace, Truncation};
use corehole::greens::{
    lehmann_poles, poles_from_lanczos, spectral_function, Excitation, GridSpec, PoleSet,
    SpectralFunction, TrialSource as Source, TrialState,
};
use corehole::integrals::{parse_fcidump, to_spin_integrals, SpinIntegrals};
use corehole::qpe_sim::{qpe_spectrum, run_campaign, CampaignConfig, ReferenceSource, CLIP_WEIGHT};
use corehole::rt_eom_cc::{
    gf_and_spectrum, init_reference, propagate_with_state, static_ccsd, Checkpoint,
    CorrelationSource, PropagationConfig,
};
use corehole::units::hartree_to_ev;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{Method, ReferenceMode, RunConfig, TrialSource};
use crate::{read_file, to_json, write_file, CliError, SCHEMA_VERSION};

/// One row of the peak table: binding energy and weight (Lehmann weight,
/// QPE probability, or Lorentzian-equivalent area of a time-domain peak).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub energy_ev: f64,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakTable {
    pub schema_version: u32,
    pub method: String,
    pub trial: String,
    /// N-electron reference energy behind the binding energies (Hartree).
    pub reference_energy: f64,
    pub columns: Vec<String>,
    pub peaks: Vec<PeakRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub method: String,
    pub integrals_sha256: String,
    pub wall_time_s: f64,
    pub config: RunConfig,
    pub derived: Map<String, Value>,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub peaks: PeakTable,
    pub spectrum: SpectralFunction,
    pub manifest: RunManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Loaded {
    ints: SpinIntegrals,
    hash: String,
}

fn load_integrals(path: &Path) -> Result<Loaded, CliError> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let store = parse_fcidump(BufReader::new(bytes.as_slice()))?;
    Ok(Loaded {
        ints: to_spin_integrals(&store)?,
        hash: sha256_hex(&bytes),
    })
}

/// Energies and weights of a vector against the eigenstates of `h`: the full
/// dense decomposition when small, Ritz data of a Lanczos run otherwise.
fn distribution(
    h: &SectorHamiltonian,
    trial: &TrialState,
    e0: f64,
    cfg: &RunConfig,
    derived: &mut Map<String, Value>,
    key: &str,
) -> Result<PoleSet, CliError> {
    let dim = h.dim();
    if dim <= cfg.solver.dense_cap {
        let eig = solve_dense_capped(h, cfg.solver.dense_cap)?;
        derived.insert(format!("{key}_route"), json!("dense"));
        Ok(lehmann_poles(&eig, trial, e0, cfg.solver.weight_floor)?)
    } else {
        let iterations = cfg.solver.lanczos_iterations.min(dim);
        let tri = lanczos_from_vector(h, &trial.vector, iterations)?;
        derived.insert(format!("{key}_route"), json!("lanczos"));
        derived.insert(format!("{key}_lanczos_iterations"), json!(tri.iterations));
        Ok(poles_from_lanczos(&tri, e0, cfg.solver.weight_floor))
    }
}

fn grid_for(cfg: &RunConfig, poles: Option<&PoleSet>, centre: f64) -> Result<GridSpec, CliError> {
    let s = &cfg.spectrum;
    let grid = match (s.window, poles) {
        (Some([lo, hi]), _) => GridSpec::new(lo, hi, s.step())?,
        (None, Some(p)) => GridSpec::around(p, cfg.run.min_weight, s.pad, s.step())?,
        // time-domain runs: satellites sit below the quasiparticle
        (None, None) => GridSpec::new(centre - 60.0 - s.pad, centre + s.pad, s.step())?,
    };
    Ok(grid)
}

fn sector_space(
    ints: &SpinIntegrals,
    n_alpha: usize,
    n_beta: usize,
    cfg: &RunConfig,
) -> Result<CISpace, CliError> {
    let truncation = match cfg.run.method {
        Method::Ci => Some(Truncation {
            reference: ints.reference,
            rank: cfg.run.rank.expect("validated"),
        }),
        _ => None,
    };
    Ok(enumerate_space(ints.m, n_alpha, n_beta, truncation)?)
}

pub fn run_job(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let Loaded { ints, hash } = load_integrals(&cfg.run.integrals)?;
    let p = cfg.trial.annihilate;
    if p >= ints.m {
        return Err(CliError::Config(format!(
            "trial.annihilate = {p} outside 0..{}",
            ints.m
        )));
    }
    if let Some([from, to]) = cfg.trial.excitation {
        if from >= ints.m || to >= ints.m || from % 2 != to % 2 {
            return Err(CliError::Config(format!(
                "trial.excitation [{from}, {to}] must join two spin-orbitals of equal spin below {}",
                ints.m
            )));
        }
    }
    let mut derived = Map::new();
    let n_alpha = ints.reference.n_alpha();
    let n_beta = ints.reference.n_beta();
    derived.insert("spin_orbitals".into(), json!(ints.m));
    derived.insert("electrons".into(), json!(ints.n_elec));
    derived.insert(
        "reference_energy_hartree".into(),
        json!(ints.reference_energy()),
    );

    // N-electron sector; time-domain runs with a CCSD correlation energy skip it
    let need_n_sector =
        !(cfg.run.method == Method::Rtcc && cfg.rtcc.e_corr == CorrelationSource::Ccsd);
    let n_sector = if need_n_sector {
        let space = sector_space(&ints, n_alpha, n_beta, cfg)?;
        let h = build_hamiltonian_capped(&ints, &space, cfg.solver.max_dim)?;
        let (e0, psi0) = ground_state(&h, cfg.solver.dense_cap)?;
        derived.insert("n_sector_dim".into(), json!(h.dim()));
        derived.insert("ground_energy_hartree".into(), json!(e0));
        Some((space, h, e0, psi0))
    } else {
        None
    };

    let method = cfg.run.method;
    let mut artifacts = vec![
        "spectrum.tsv".to_string(),
        "spectrum.json".into(),
        "peaks.json".into(),
    ];
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let (spectrum, table) = match method {
        Method::Fci | Method::Ci | Method::Qpe => {
            let (n_space, h_n, e0, psi0) = n_sector.as_ref().expect("N sector solved");
            let (a, b) = if p % 2 == 0 {
                (n_alpha.checked_sub(1), Some(n_beta))
            } else {
                (Some(n_alpha), n_beta.checked_sub(1))
            };
            let (Some(a), Some(b)) = (a, b) else {
                return Err(CliError::Config(
                    "no electron of that spin to remove".into(),
                ));
            };
            let space = sector_space(&ints, a, b, cfg)?;
            let psi0: Vec<f64> = psi0.iter().copied().collect();
            let source = match cfg.trial.source {
                TrialSource::Determinant => Source::Determinant(ints.reference),
                TrialSource::Ground => Source::State {
                    space: n_space,
                    vector: &psi0,
                },
            };
            let extra = cfg
                .trial
                .excitation
                .map(|[from, to]| Excitation { from, to });
            let trial = corehole::greens::make_trial(source, p, extra, &space)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let h = build_hamiltonian_capped(&ints, &space, cfg.solver.max_dim)?;
            derived.insert("n_minus_1_sector_dim".into(), json!(h.dim()));
            derived.insert("trial_norm_sqr".into(), json!(trial.norm_sqr()));
            let poles = distribution(&h, &trial, *e0, cfg, &mut derived, "n_minus_1")?;
            let grid = grid_for(cfg, Some(&poles), 0.0)?;
            derived.insert("grid".into(), json!(grid));
            if method == Method::Qpe {
                let reference = match cfg.qpe.reference {
                    ReferenceMode::Exact => ReferenceSource::Exact(*e0),
                    ReferenceMode::Sampled => {
                        let k = n_space.position(&ints.reference).ok_or_else(|| {
                            CliError::Numeric("reference determinant outside the N sector".into())
                        })?;
                        let mut v = vec![0.0; n_space.len()];
                        v[k] = 1.0;
                        let hf = TrialState {
                            vector: v,
                            space: n_space.fingerprint(),
                            label: "reference determinant".into(),
                            source_spin_orbital: p,
                        };
                        let d = distribution(h_n, &hf, *e0, cfg, &mut derived, "n")?;
                        ReferenceSource::Sampled {
                            energies: d.poles.iter().map(|x| x.energy).collect(),
                            weights: d.poles.iter().map(|x| x.weight).collect(),
                            shots: cfg.qpe.reference_shots,
                        }
                    }
                };
                let campaign_cfg = CampaignConfig {
                    bits: cfg.qpe.bits,
                    shots: cfg.qpe.shots,
                    seed: cfg.qpe.seed,
                    gap: cfg.qpe.gap,
                    margin_fraction: cfg.qpe.margin,
                    energy_range: None,
                    keep_shots: cfg.qpe.keep_shots,
                };
                let campaign = run_campaign(&poles, &trial.label, &campaign_cfg, &reference)?;
                derived.insert("qpe_tau".into(), json!(campaign.window.tau));
                derived.insert("qpe_offset_hartree".into(), json!(campaign.window.offset));
                derived.insert("qpe_bin_width_ev".into(), json!(campaign.bin_width_ev));
                derived.insert(
                    "qpe_reference_energy_hartree".into(),
                    json!(campaign.reference.energy),
                );
                derived.insert("qpe_clip_weight".into(), json!(CLIP_WEIGHT));
                write_file(&out_dir.join("campaign.json"), to_json(&campaign))?;
                artifacts.push("campaign.json".into());
                let sf = qpe_spectrum(&campaign.peaks, &grid, cfg.spectrum.broadening)?;
                let mut rows: Vec<PeakRow> = campaign
                    .peaks
                    .iter()
                    .filter(|q| q.probability >= cfg.run.min_weight)
                    .map(|q| PeakRow {
                        energy_ev: q.energy_ev,
                        weight: q.probability,
                        count: Some(q.count),
                        height: None,
                    })
                    .collect();
                rows.sort_by(|a, b| a.energy_ev.total_cmp(&b.energy_ev));
                let table = PeakTable {
                    schema_version: SCHEMA_VERSION,
                    method: method.name().into(),
                    trial: trial.label.clone(),
                    reference_energy: campaign.reference.energy,
                    columns: vec!["energy_eV".into(), "P".into()],
                    peaks: rows,
                };
                (sf, table)
            } else {
                let sf = spectral_function(
                    &poles,
                    &grid,
                    cfg.spectrum.broadening,
                    cfg.spectrum.lineshape,
                )?;
                let rows = poles
                    .table(cfg.run.min_weight)
                    .into_iter()
                    .map(|q| PeakRow {
                        energy_ev: q.binding_ev,
                        weight: q.weight,
                        count: None,
                        height: None,
                    })
                    .collect();
                let table = PeakTable {
                    schema_version: SCHEMA_VERSION,
                    method: method.name().into(),
                    trial: trial.label.clone(),
                    reference_energy: *e0,
                    columns: vec!["energy_eV".into(), "weight".into()],
                    peaks: rows,
                };
                (sf, table)
            }
        }
        Method::Rtcc => {
            let e_corr = match cfg.rtcc.e_corr {
                CorrelationSource::Fci => {
                    let (_, h_n, e0, _) = n_sector.as_ref().expect("N sector solved");
                    let e_ref = h_n.expectation(&ints.reference).ok_or_else(|| {
                        CliError::Numeric("reference determinant outside the N sector".into())
                    })?;
                    e0 - e_ref
                }
                CorrelationSource::Ccsd => static_ccsd(&ints, 1e-10, 500)?,
            };
            derived.insert("correlation_energy_hartree".into(), json!(e_corr));
            let reference =
                init_reference(&ints, p, e_corr).map_err(|e| CliError::Config(e.to_string()))?;
            let pcfg = PropagationConfig {
                dt: cfg.rtcc.dt,
                t_max: cfg.rtcc.t_max,
                integrator: cfg.rtcc.integrator,
                ..Default::default()
            };
            let resume = match &cfg.rtcc.resume {
                Some(path) => Some(Checkpoint::read(path)?),
                None => None,
            };
            let (traj, state) = propagate_with_state(&reference, &pcfg, resume)?;
            derived.insert("rtcc_steps".into(), json!(traj.steps()));
            derived.insert("rtcc_halved_steps".into(), json!(traj.halved_steps));
            derived.insert(
                "rtcc_max_fixed_point_iterations".into(),
                json!(traj.max_fixed_point_iterations),
            );
            let e0 = ints.reference_energy() + e_corr;
            let quasi = hartree_to_ev(reference.eps_c + e_corr);
            derived.insert("koopmans_binding_ev".into(), json!(quasi));
            let grid = grid_for(cfg, None, quasi)?;
            derived.insert("grid".into(), json!(grid));
            let sf = gf_and_spectrum(&traj, &reference, cfg.rtcc.damping, &grid, cfg.rtcc.tail)?;
            // weight of a time-domain peak: the area of its basin in A(ω)
            let rows = sf
                .peak_areas()
                .into_iter()
                .filter(|(_, area)| *area >= cfg.run.min_weight)
                .map(|(pk, area)| PeakRow {
                    energy_ev: pk.position,
                    weight: area,
                    count: None,
                    height: Some(pk.height),
                })
                .collect();
            Checkpoint {
                trajectory: traj,
                state,
            }
            .write(&out_dir.join("trajectory.chk"))?;
            artifacts.push("trajectory.chk".into());
            let table = PeakTable {
                schema_version: SCHEMA_VERSION,
                method: method.name().into(),
                trial: format!("a_{p} on reference determinant"),
                reference_energy: e0,
                columns: vec!["energy_eV".into(), "weight".into()],
                peaks: rows,
            };
            (sf, table)
        }
    };

    write_file(&out_dir.join("spectrum.tsv"), spectrum.to_tsv())?;
    write_file(
        &out_dir.join("spectrum.json"),
        to_json(&spectrum.to_document(&hash)),
    )?;
    write_file(&out_dir.join("peaks.json"), to_json(&table))?;
    write_file(&out_dir.join("config.toml"), cfg.to_toml())?;
    artifacts.push("config.toml".into());
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        method: method.name().into(),
        integrals_sha256: hash,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
        derived,
        artifacts,
    };
    write_file(&out_dir.join("manifest.json"), to_json(&manifest))?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        peaks: table,
        spectrum,
        manifest,
    })
}

/// Loads the artifacts of a finished run directory.
pub fn load_run(dir: &Path) -> Result<(RunManifest, PeakTable, SpectralFunction), CliError> {
    let parse = |name: &str| -> Result<String, CliError> { read_file(&dir.join(name)) };
    let manifest: RunManifest = serde_json::from_str(&parse("manifest.json")?)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.join("manifest.json").display())))?;
    let table: PeakTable = serde_json::from_str(&parse("peaks.json")?)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.join("peaks.json").display())))?;
    let doc: corehole::greens::SpectrumDocument = serde_json::from_str(&parse("spectrum.json")?)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.join("spectrum.json").display())))?;
    let sf = SpectralFunction {
        grid: doc.omega_ev,
        values: doc.a_per_ev,
        broadening: doc.broadening_ev,
        shift: doc.shift_ev,
        lineshape: doc.lineshape,
        poles: doc.poles,
    };
    Ok((manifest, table, sf))
}

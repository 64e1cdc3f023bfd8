//! The four pipeline commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use afferentsim::analysis::{
    firing_rate, raster, raster_csv, rates_csv, regression, RateRecord, RegressionReport,
};
use afferentsim::fem::{IndentationModel, IndentationOptions, Indenter, IndenterSpec, StressTrace};
use afferentsim::mesh::{build_mesh, Mesh};
use afferentsim::neural::{run_afferent, AfferentParams, SpikeTrain};
use afferentsim::optimize::{
    fit_afferent, predicted_rate, select_candidate, BankEntry, CandidateVector, FitProblem,
    ObservedRateSet, StressBank,
};
use afferentsim::stimulus::{StimulusKind, StimulusSpec};
use afferentsim::{AfferentType, Error, PerAfferent};
use anyhow::Context as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{sha256_hex, write_file, write_json, DirLock, Provenance};

fn prepare(cfg: &RunConfig) -> anyhow::Result<String> {
    cfg.validate()?;
    Ok(sha256_hex(cfg.canonical_json().as_bytes()))
}

/// Generated or loaded mesh plus the hash of its text form.
pub fn load_mesh(cfg: &RunConfig) -> anyhow::Result<(Mesh, String)> {
    let mesh = match &cfg.mesh_file {
        Some(p) => {
            let path = cfg.resolve(p);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading mesh {}", path.display()))?;
            Mesh::from_text(&text).with_context(|| format!("parsing mesh {}", path.display()))?
        }
        None => build_mesh(&cfg.geometry, &cfg.materials)?,
    };
    let hash = sha256_hex(mesh.to_text().as_bytes());
    Ok((mesh, hash))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshSummary {
    pub path: PathBuf,
    pub nodes: usize,
    pub elements: usize,
    pub hash: String,
}

pub fn cmd_mesh(cfg: &RunConfig) -> anyhow::Result<MeshSummary> {
    let config_hash = prepare(cfg)?;
    let out = cfg.output_path();
    let _lock = DirLock::acquire(&out)?;
    let (mesh, hash) = load_mesh(cfg)?;
    let mut prov = Provenance::new("mesh", config_hash, cfg.seed);
    prov.mesh_hash = Some(hash.clone());
    let text = mesh.to_text();
    let (header, body) = text.split_once('\n').expect("mesh text has a header line");
    let path = out.join("mesh.txt");
    write_file(&path, &format!("{header}\n{}{body}", prov.comment()))?;
    Ok(MeshSummary {
        path,
        nodes: mesh.node_count(),
        elements: mesh.element_count(),
        hash,
    })
}

/// Stress at every afferent node for one stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusRun {
    pub stimulus: StimulusSpec,
    pub traces: PerAfferent<StressTrace>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub fem_runs: usize,
    pub cache_hits: usize,
}

#[derive(Serialize, Deserialize)]
struct CachedTraces {
    key: String,
    traces: PerAfferent<StressTrace>,
}

fn is_noise(s: &StimulusSpec) -> bool {
    matches!(s.kind, StimulusKind::BandpassNoise { .. })
}

/// Hash of everything besides the mesh that determines a stress trace.
fn stimulus_hash(cfg: &RunConfig, s: &StimulusSpec) -> String {
    let key = json!({
        "stimulus": s,
        "seed_offset": if is_noise(s) { cfg.seed } else { 0 },
        "indenter": cfg.indenter,
        "contact": cfg.contact,
    });
    sha256_hex(key.to_string().as_bytes())
}

/// FEM stage over a protocol. Traces are cached under `<out>/cache` keyed by
/// the mesh and stimulus hashes.
pub fn stress_traces(
    cfg: &RunConfig,
    mesh: &Mesh,
    mesh_hash: &str,
    stimuli: &[StimulusSpec],
    out: &Path,
) -> anyhow::Result<(Vec<StimulusRun>, CacheStats)> {
    let cache_dir = out.join("cache");
    let mut stats = CacheStats::default();
    let mut model: Option<IndentationModel<'_>> = None;
    let mut runs = Vec::with_capacity(stimuli.len());
    for s in stimuli {
        let stim_hash = stimulus_hash(cfg, s);
        let key = format!("{}-{}", &mesh_hash[..16], &stim_hash[..16]);
        let path = cache_dir.join(format!("{key}.json"));
        let cached = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<CachedTraces>(&t).ok())
            .filter(|c| c.key == format!("{mesh_hash}-{stim_hash}"));
        if let Some(c) = cached {
            eprintln!("cache hit for {}: FEM stage skipped", s.id);
            stats.cache_hits += 1;
            runs.push(StimulusRun {
                stimulus: s.clone(),
                traces: c.traces,
            });
            continue;
        }
        let model = match &mut model {
            Some(m) => m,
            None => model.insert(
                IndentationModel::new(mesh, cfg.indenter.indenter())?.with_contact(cfg.contact),
            ),
        };
        let displacement_mm = s
            .generate(cfg.seed)
            .with_context(|| format!("stimulus {}", s.id))?;
        let spec = IndenterSpec {
            diameter_mm: cfg.indenter.diameter_mm,
            center_x_mm: cfg.indenter.center_x_mm,
            pre_indentation_mm: cfg.indenter.pre_indentation_mm,
            dt_ms: s.dt_ms,
            displacement_mm,
        };
        let result = model
            .run(&spec, &IndentationOptions::default())
            .with_context(|| format!("stimulus {}", s.id))?;
        stats.fem_runs += 1;
        let entry = CachedTraces {
            key: format!("{mesh_hash}-{stim_hash}"),
            traces: result.traces,
        };
        write_file(&path, &serde_json::to_string(&entry)?)?;
        runs.push(StimulusRun {
            stimulus: s.clone(),
            traces: entry.traces,
        });
    }
    Ok((runs, stats))
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn observed_lookup(
    observed: Option<&BTreeMap<AfferentType, ObservedRateSet>>,
    afferent: AfferentType,
    s: &StimulusSpec,
) -> Option<f64> {
    let StimulusKind::Sinusoid {
        freq_hz,
        amplitude_um,
    } = s.kind
    else {
        return None;
    };
    observed?.get(&afferent)?.records.iter().find_map(|r| {
        ((r.freq_hz - freq_hz).abs() < 1e-9
            && (r.amplitude_um - amplitude_um).abs() <= 1e-6 * amplitude_um.max(1.0))
        .then_some(r.rate_ips)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionSet {
    pub pooled: Result<RegressionReport, String>,
    pub per_frequency: BTreeMap<String, Result<RegressionReport, String>>,
}

fn regressions(records: &[RateRecord]) -> BTreeMap<AfferentType, RegressionSet> {
    let mut out = BTreeMap::new();
    for a in AfferentType::ALL {
        let rows: Vec<&RateRecord> = records
            .iter()
            .filter(|r| r.afferent == a && r.observed_ips.is_some())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let pairs = |f: Option<f64>| -> Vec<(f64, f64)> {
            rows.iter()
                .filter(|r| f.is_none_or(|f| r.freq_hz == f))
                .map(|r| (r.observed_ips.unwrap_or_default(), r.predicted_ips))
                .collect()
        };
        let mut freqs: Vec<f64> = rows.iter().map(|r| r.freq_hz).collect();
        freqs.sort_by(f64::total_cmp);
        freqs.dedup();
        let per_frequency = freqs
            .into_iter()
            .map(|f| {
                (
                    format!("{f}"),
                    regression(&pairs(Some(f))).map_err(|e| e.to_string()),
                )
            })
            .collect();
        out.insert(
            a,
            RegressionSet {
                pooled: regression(&pairs(None)).map_err(|e| e.to_string()),
                per_frequency,
            },
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub out: PathBuf,
    pub records: Vec<RateRecord>,
    pub cache: CacheStats,
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    observed_csv: Option<&Path>,
) -> anyhow::Result<SimulateSummary> {
    let config_hash = prepare(cfg)?;
    let observed = match observed_csv {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(
                ObservedRateSet::from_csv(&text)
                    .with_context(|| format!("parsing {}", p.display()))?,
            )
        }
        None => None,
    };
    let out = cfg.output_path();
    let _lock = DirLock::acquire(&out)?;
    let protocol = cfg.load_protocol()?;
    let params = cfg.load_params()?;
    let (mesh, mesh_hash) = load_mesh(cfg)?;
    let (runs, cache) = stress_traces(cfg, &mesh, &mesh_hash, &protocol.stimuli, &out)?;

    let mut prov = Provenance::new("simulate", config_hash, cfg.seed);
    prov.mesh_hash = Some(mesh_hash);
    let stamp = prov.comment();

    let mut records = Vec::new();
    let mut trains: PerAfferent<Vec<SpikeTrain>> = PerAfferent::default();
    let mut spikes = format!("{}\n", json!({ "provenance": prov.json() }));
    for run in &runs {
        let s = &run.stimulus;
        let (freq_hz, amplitude_um) = s.nominal();
        for a in AfferentType::ALL {
            let trace = &run.traces[a];
            let train = run_afferent(trace, &params[a])
                .with_context(|| format!("stimulus {} ({a})", s.id))?;
            let predicted_ips = firing_rate(&train, s.discard_ms, s.window_ms())
                .with_context(|| format!("stimulus {}", s.id))?;
            records.push(RateRecord {
                afferent: a,
                stimulus_id: s.id.clone(),
                freq_hz,
                amplitude_um,
                predicted_ips,
                observed_ips: observed_lookup(observed.as_ref(), a, s),
                window_ms: s.window_ms(),
            });
            let _ = writeln!(
                spikes,
                "{}",
                json!({ "stimulus_id": s.id, "afferent": a, "spike_times_ms": train.spike_times_ms })
            );
            write_file(
                &out.join("stress")
                    .join(format!("{}.{a}.csv", file_stem(&s.id))),
                &format!("{stamp}{}", trace.to_csv()),
            )?;
            trains[a].push(train);
        }
    }
    write_file(&out.join("spikes.jsonl"), &spikes)?;
    write_file(
        &out.join("rates.csv"),
        &format!("{stamp}{}", rates_csv(&records)),
    )?;
    for (a, t) in trains.iter() {
        write_file(
            &out.join(format!("raster_{a}.csv")),
            &format!(
                "{stamp}# trial = stimulus index in rates.csv order\n{}",
                raster_csv(&raster(t))
            ),
        )?;
    }
    if observed.is_some() {
        write_json(
            &out.join("regression.json"),
            &json!({ "provenance": prov.json(), "afferents": regressions(&records) }),
        )?;
    }
    Ok(SimulateSummary {
        out,
        records,
        cache,
    })
}

/// Stress banks over the sinusoidal stimuli of a protocol.
pub fn sinusoid_banks(runs: &[StimulusRun]) -> PerAfferent<StressBank> {
    PerAfferent::from_fn(|a| StressBank {
        afferent: a,
        entries: runs
            .iter()
            .filter_map(|r| {
                let StimulusKind::Sinusoid {
                    freq_hz,
                    amplitude_um,
                } = r.stimulus.kind
                else {
                    return None;
                };
                Some(BankEntry {
                    stimulus_id: r.stimulus.id.clone(),
                    freq_hz,
                    amplitude_um,
                    discard_ms: r.stimulus.discard_ms,
                    window_ms: r.stimulus.window_ms(),
                    trace: r.traces[a].clone(),
                })
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedAfferent {
    pub afferent: AfferentType,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub objectives: Vec<f64>,
    pub objective_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub out: PathBuf,
    pub fitted: Vec<FittedAfferent>,
    pub cache: CacheStats,
}

pub fn cmd_fit(cfg: &RunConfig, observed_csv: &Path) -> anyhow::Result<FitSummary> {
    let config_hash = prepare(cfg)?;
    let text = std::fs::read_to_string(observed_csv)
        .with_context(|| format!("reading {}", observed_csv.display()))?;
    let observed = ObservedRateSet::from_csv(&text)
        .with_context(|| format!("parsing {}", observed_csv.display()))?;
    let data_hash = sha256_hex(text.as_bytes());
    let out = cfg.output_path();
    let _lock = DirLock::acquire(&out)?;
    let protocol = cfg.load_protocol()?;
    let base = cfg.load_params()?;
    let (mesh, mesh_hash) = load_mesh(cfg)?;
    let (runs, cache) = stress_traces(cfg, &mesh, &mesh_hash, &protocol.stimuli, &out)?;
    let banks = sinusoid_banks(&runs);

    let mut problems = Vec::new();
    let mut missing = Vec::new();
    for (a, set) in &observed {
        match FitProblem::new(&banks[*a], set, base[*a].clone()) {
            Ok(p) => problems.push(p),
            Err(Error::MissingConditions(m)) => missing.extend(m),
            Err(e) => return Err(e.into()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingConditions(missing).into());
    }

    let mut prov = Provenance::new("fit", config_hash, cfg.seed);
    prov.mesh_hash = Some(mesh_hash);
    let stamp = prov.comment();
    let mut fitted_params = base.clone();
    let mut fitted = Vec::new();
    let mut records = Vec::new();
    for problem in &problems {
        let a = problem.base().afferent;
        let space = cfg.fit.space(a);
        let front = fit_afferent(problem, &space, &cfg.fit.optimizer, cfg.seed)
            .with_context(|| format!("fitting {a}"))?;
        let best = select_candidate(&front)?;
        let candidate = CandidateVector {
            afferent: a,
            values: best.params.clone(),
        };
        fitted_params[a] = candidate.apply(&base[a])?;
        write_file(
            &out.join(format!("front_{a}.csv")),
            &format!("{stamp}{}", front.to_csv(&space.names)),
        )?;
        let result = FittedAfferent {
            afferent: a,
            names: space.names.clone(),
            values: best.params.clone(),
            objectives: best.objectives.clone(),
            objective_sum: best.objective_sum(),
        };
        write_json(
            &out.join(format!("selected_{a}.json")),
            &json!({
                "provenance": prov.json(),
                "budget": cfg.fit.optimizer.budget,
                "population": cfg.fit.optimizer.population,
                "bounds": space.bounds,
                "data_hash": data_hash,
                "evaluations": front.evaluations,
                "selected": result,
            }),
        )?;
        fitted.push(result);

        let bank = &banks[a];
        for r in &observed[&a].records {
            let entry = &bank.entries[bank
                .find(r.freq_hz, r.amplitude_um)
                .expect("checked by FitProblem")];
            records.push(RateRecord {
                afferent: a,
                stimulus_id: entry.stimulus_id.clone(),
                freq_hz: r.freq_hz,
                amplitude_um: r.amplitude_um,
                predicted_ips: predicted_rate(entry, &fitted_params[a])?,
                observed_ips: Some(r.rate_ips),
                window_ms: entry.window_ms,
            });
        }
    }
    let mut params_json = serde_json::to_value(&fitted_params)?;
    params_json["provenance"] = prov.json();
    write_json(&out.join("fitted_params.json"), &params_json)?;
    write_file(
        &out.join("fit_rates.csv"),
        &format!("{stamp}{}", rates_csv(&records)),
    )?;
    Ok(FitSummary { out, fitted, cache })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub max_deflection_mm: f64,
    pub max_deflection_in_range: bool,
    pub monotone_decay: bool,
    pub deflection_1mm: Option<f64>,
    pub deflection_5mm: Option<f64>,
    pub decays_from_1_to_5mm: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.max_deflection_in_range && self.monotone_decay && self.decays_from_1_to_5mm
    }
}

/// True when deflection strictly decreases moving away from `center` on
/// both sides, over samples within `extent`.
pub fn decays_monotonically(x_mm: &[f64], deflection_mm: &[f64], center: f64, extent: f64) -> bool {
    let side = |sign: f64| {
        let mut pts: Vec<(f64, f64)> = x_mm
            .iter()
            .zip(deflection_mm)
            .map(|(&x, &d)| (sign * (x - center), d))
            .filter(|&(r, _)| r >= -1e-12 && r <= extent + 1e-12)
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.windows(2).all(|w| w[1].1 < w[0].1)
    };
    side(1.0) && side(-1.0)
}

pub fn cmd_validate(cfg: &RunConfig) -> anyhow::Result<ValidationReport> {
    let config_hash = prepare(cfg)?;
    let out = cfg.output_path();
    let _lock = DirLock::acquire(&out)?;
    let (mesh, mesh_hash) = load_mesh(cfg)?;
    let v = &cfg.validation;
    let center = cfg.indenter.center_x_mm;
    let probe = Indenter {
        diameter_mm: v.probe_diameter_mm,
        center_x_mm: center,
    };
    let mut model = IndentationModel::new(&mesh, probe)?.with_contact(cfg.contact);
    let u = model
        .displacement(v.indentation_mm)
        .context("static probe indentation")?;
    let profile = model.deflection_profile(&u, v.interval_mm);
    let max = profile.max_deflection();
    let (d1, d5) = (profile.at(center + 1.0), profile.at(center + 5.0));
    let report = ValidationReport {
        max_deflection_mm: max,
        max_deflection_in_range: (v.max_deflection_range_mm[0]..=v.max_deflection_range_mm[1])
            .contains(&max),
        monotone_decay: decays_monotonically(
            &profile.x_mm,
            &profile.deflection_mm,
            center,
            v.extent_mm,
        ),
        deflection_1mm: d1,
        deflection_5mm: d5,
        decays_from_1_to_5mm: matches!((d1, d5), (Some(a), Some(b)) if b < a),
    };
    let mut prov = Provenance::new("validate", config_hash, cfg.seed);
    prov.mesh_hash = Some(mesh_hash);
    write_file(
        &out.join("deflection.csv"),
        &format!("{}{}", prov.comment(), profile.to_csv()),
    )?;
    write_json(
        &out.join("validation.json"),
        &json!({ "provenance": prov.json(), "report": report, "passed": report.passed() }),
    )?;
    Ok(report)
}

/// Fitted parameters file written by `fit`, minus its provenance block.
pub fn read_fitted_params(path: &Path) -> anyhow::Result<PerAfferent<AfferentParams>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use afferentsim::mesh::Mesh;
use afferentsim_cli::commands::read_fitted_params;
use afferentsim_cli::config::ParamsSource;
use afferentsim_cli::output::LOCK_FILE;
use afferentsim_cli::{cmd_fit, cmd_mesh, cmd_simulate, cmd_validate, exit_code, RunConfig};
use tempfile::TempDir;

fn config_in(dir: &Path) -> RunConfig {
    RunConfig {
        output_dir: dir.join("out"),
        ..RunConfig::default()
    }
}

/// Four short sinusoids, one per fitting frequency.
const SMALL_PROTOCOL: &str = r#"[
  {"id": "a20", "kind": "sinusoid", "freq_hz": 20, "amplitude_um": 60, "duration_ms": 345, "window_ms": 245},
  {"id": "a50", "kind": "sinusoid", "freq_hz": 50, "amplitude_um": 30, "duration_ms": 250},
  {"id": "a100", "kind": "sinusoid", "freq_hz": 100, "amplitude_um": 20, "duration_ms": 250},
  {"id": "a300", "kind": "sinusoid", "freq_hz": 300, "amplitude_um": 10, "duration_ms": 250}
]"#;

fn small_config(dir: &Path) -> RunConfig {
    let protocol = dir.join("small.json");
    fs::write(&protocol, SMALL_PROTOCOL).unwrap();
    let mut cfg = config_in(dir);
    cfg.protocol = protocol.to_string_lossy().into_owned();
    cfg.fit.optimizer.population = 8;
    cfg.fit.optimizer.budget = 24;
    cfg
}

fn observed_csv(dir: &Path, rows: &str) -> PathBuf {
    let path = dir.join("observed.csv");
    fs::write(
        &path,
        format!("afferent,freq_hz,amplitude_um,rate_ips\n{rows}"),
    )
    .unwrap();
    path
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// File name to contents for every file under `dir`, cache excluded.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if p.file_name().unwrap() != "cache" {
                    stack.push(p);
                }
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_afferentsim"))
}

#[test]
fn mesh_is_deterministic_and_reloads() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path());
    let a = cmd_mesh(&cfg).unwrap();
    let first = read(&a.path);
    let b = cmd_mesh(&cfg).unwrap();
    assert_eq!(first, read(&b.path));
    assert_eq!((a.nodes, a.elements), (1794, 1700));

    let mesh = Mesh::from_text(&first).unwrap();
    assert_eq!(mesh.node_count(), a.nodes);
    let copy = tmp.path().join("copy.txt");
    fs::write(&copy, &first).unwrap();
    let from_file = RunConfig {
        mesh_file: Some(copy),
        output_dir: tmp.path().join("reloaded"),
        ..RunConfig::default()
    };
    assert_eq!(cmd_mesh(&from_file).unwrap().hash, a.hash);
}

#[test]
fn invalid_geometry_exits_2_naming_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = tmp.path().join("bad.json");
    fs::write(&cfg_path, r#"{"geometry": {"domain_width_mm": 0}}"#).unwrap();
    let out = bin()
        .args(["mesh", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain_width_mm"));
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = tmp.path().join("bad.json");
    fs::write(&cfg_path, r#"{"sead": 3}"#).unwrap();
    let out = bin()
        .args(["mesh", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_amplitude_protocol_gives_silence() {
    let tmp = TempDir::new().unwrap();
    let protocol = tmp.path().join("zero.json");
    fs::write(
        &protocol,
        r#"[{"id": "z", "kind": "sinusoid", "freq_hz": 50, "amplitude_um": 0, "duration_ms": 250},
            {"id": "n", "kind": "bandpass_noise", "low_hz": 5, "high_hz": 100, "rms_um": 0, "seed": 1, "duration_ms": 250}]"#,
    )
    .unwrap();
    let mut cfg = config_in(tmp.path());
    cfg.protocol = protocol.to_string_lossy().into_owned();
    let s = cmd_simulate(&cfg, None).unwrap();
    assert_eq!(s.records.len(), 6);
    assert!(s.records.iter().all(|r| r.predicted_ips == 0.0));
}

#[test]
fn rerun_hits_the_cache_with_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path());
    let first = cmd_simulate(&cfg, None).unwrap();
    assert_eq!(first.records.len(), 111);
    assert_eq!(first.cache.fem_runs, 37);
    let before = snapshot(&first.out);
    let second = cmd_simulate(&cfg, None).unwrap();
    assert_eq!(second.cache.cache_hits, 37);
    assert_eq!(second.cache.fem_runs, 0);
    assert_eq!(snapshot(&second.out), before);
    let rates = read(&first.out.join("rates.csv"));
    assert!(rates.starts_with("# provenance: "));
    assert!(!first.out.join(LOCK_FILE).exists());
}

#[test]
fn observed_rates_produce_a_regression_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let csv = observed_csv(
        tmp.path(),
        "RA,20,60,10\nRA,50,30,20\nRA,100,20,35\nRA,300,10,5\n",
    );
    let s = cmd_simulate(&cfg, Some(&csv)).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&read(&s.out.join("regression.json"))).unwrap();
    assert!(report["afferents"]["RA"]["pooled"].is_object());
    let ra: Vec<_> = s
        .records
        .iter()
        .filter(|r| r.afferent.as_str() == "RA")
        .collect();
    assert!(ra.iter().all(|r| r.observed_ips.is_some()));
}

#[test]
fn locked_output_directory_is_refused() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path());
    fs::create_dir_all(&cfg.output_dir).unwrap();
    fs::write(cfg.output_dir.join(LOCK_FILE), "").unwrap();
    let err = cmd_mesh(&cfg).unwrap_err();
    assert!(err.to_string().contains("in use"), "{err}");
    assert_eq!(exit_code(&err), 1);
}

#[test]
fn validate_reports_passing_checks() {
    let tmp = TempDir::new().unwrap();
    let cfg = config_in(tmp.path());
    let r = cmd_validate(&cfg).unwrap();
    assert!(r.passed(), "{r:?}");
    assert!(cfg.output_dir.join("deflection.csv").exists());
}

#[test]
fn empty_observed_file_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let csv = observed_csv(tmp.path(), "");
    let err = cmd_fit(&cfg, &csv).unwrap_err();
    assert!(format!("{err:#}").contains("no observed rates"), "{err:#}");
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn missing_conditions_are_all_listed() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path());
    let csv = observed_csv(tmp.path(), "SA,20,61,1\nPC,300,99,2\nRA,50,30,3\n");
    let err = cmd_fit(&cfg, &csv).unwrap_err();
    let msg = format!("{err:#}");
    assert!(
        msg.contains("SA 20 Hz 61 um") && msg.contains("PC 300 Hz 99 um"),
        "{msg}"
    );
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn fit_writes_reusable_params_and_seed_changes_the_front() {
    let tmp = TempDir::new().unwrap();
    let csv = observed_csv(
        tmp.path(),
        "RA,20,60,10\nRA,50,30,20\nRA,100,20,35\nRA,300,10,5\n",
    );
    let mut cfg = small_config(tmp.path());
    cfg.seed = 1;
    let a = cmd_fit(&cfg, &csv).unwrap();
    assert_eq!(a.fitted.len(), 1);
    let front_a = read(&a.out.join("front_RA.csv"));
    assert!(front_a
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("rank,objective_20"));

    let params_path = a.out.join("fitted_params.json");
    let params = read_fitted_params(&params_path).unwrap();
    assert_eq!(params.ra.tau_m_ms, a.fitted[0].values[0]);
    let mut reuse = small_config(tmp.path());
    reuse.output_dir = tmp.path().join("reuse");
    reuse.params = ParamsSource::File(params_path);
    cmd_simulate(&reuse, None).unwrap();

    cfg.seed = 2;
    cfg.output_dir = tmp.path().join("seed2");
    let b = cmd_fit(&cfg, &csv).unwrap();
    let strip = |t: &str| t.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_ne!(strip(&front_a), strip(&read(&b.out.join("front_RA.csv"))));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let out = bin()
        .args(["mesh", "--seed", "11", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(read(&tmp.path().join("mesh.txt")).contains("\"seed\":11"));
}

#[test]
fn noise_seed_changes_the_spike_trains() {
    let tmp = TempDir::new().unwrap();
    let spikes: Vec<String> = (1..=3)
        .map(|seed| {
            let cfg = RunConfig {
                protocol: "appendixC".into(),
                seed,
                output_dir: tmp.path().join(format!("seed{seed}")),
                ..RunConfig::default()
            };
            let s = cmd_simulate(&cfg, None).unwrap();
            assert_eq!(s.records.len(), 75);
            read(&s.out.join("spikes.jsonl"))
                .lines()
                .skip(1)
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect();
    assert_ne!(spikes[0], spikes[1]);
    assert_ne!(spikes[1], spikes[2]);
}

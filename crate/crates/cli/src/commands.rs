//! Stage implementations. Every stage reads its inputs from disk and
//! writes its artifacts back, so stages can run independently and a full
//! run is a plain sequential composition.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use cdi_core::cdag::{
    build_cdag, build_cdag_baseline, BaselineKind, BuildLog, BuildParams, CDag, CdagJson,
};
use cdi_core::evaluation::{evaluate, GroundTruth};
use cdi_core::extract::{
    discover_joinable, extract_from_table, extract_kg_properties, link_entities,
    CandidateAttribute, ExtractionReport, JoinCandidate, KgIndex,
};
use cdi_core::inference::{estimate_effect, AnalysisReport, EffectKind};
use cdi_core::oracle::{
    HeuristicBackend, HttpBackend, HttpConfig, OracleBackend, RecordingOracle, ReplayBackend,
};
use cdi_core::organize::{organize, OrganizerConfig, OrganizerLog, WeightVector};
use cdi_core::table::{load_csv, write_csv, Dataset};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::manifest::{digest_inputs, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Hybrid,
    Pc,
    Bic,
}

pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, name: &str) -> Result<T, CliError> {
        let path = self.path(name);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn load_input(config: &PipelineConfig) -> Result<Dataset, CliError> {
    Ok(load_csv(
        &config.input_csv,
        &config.key,
        &config.exposure,
        &config.outcome,
        &config.missing_marker,
    )?)
}

fn load_augmented(config: &PipelineConfig, artifacts: &Artifacts) -> Result<Dataset, CliError> {
    Ok(load_csv(
        artifacts.path("augmented.csv"),
        &config.key,
        &config.exposure,
        &config.outcome,
        &config.missing_marker,
    )?)
}

pub fn build_backend(config: &PipelineConfig) -> Result<Box<dyn OracleBackend>, CliError> {
    let oc = &config.oracle;
    Ok(match oc.backend.as_str() {
        "replay" => {
            let path = oc.replay_path.as_ref().expect("validated");
            Box::new(ReplayBackend::from_file(path, oc.strict)?)
        }
        "heuristic" => match &oc.rules_path {
            Some(path) => Box::new(HeuristicBackend::from_file(path)?),
            None => Box::new(HeuristicBackend::default()),
        },
        "http" => {
            let auth_header = oc.auth_header_name.as_ref().and_then(|name| {
                std::env::var("ORACLE_AUTH_VALUE")
                    .ok()
                    .map(|v| (name.clone(), v))
            });
            Box::new(HttpBackend::new(HttpConfig {
                endpoint: oc.endpoint.clone().expect("validated"),
                auth_header,
                timeout: std::time::Duration::from_secs(oc.timeout_s),
                max_inflight: oc.max_inflight,
                rps: oc.rps,
                retries: 3,
            }))
        }
        other => return Err(CliError::Config(format!("unknown backend {other}"))),
    })
}

/// candidates.json: full-fidelity candidate cells plus the extraction
/// report.
#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatesFile {
    pub report: ExtractionReport,
    pub candidates: Vec<CandidateAttribute>,
}

/// organizer.json: the per-candidate log plus the attached IPW weights
/// the analysis stage needs.
#[derive(Debug, Serialize, Deserialize)]
pub struct OrganizerFile {
    pub log: OrganizerLog,
    pub weights: BTreeMap<String, WeightVector>,
}

pub fn cmd_extract(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir)?;
    let dataset = load_input(config)?;
    let mut candidates: Vec<CandidateAttribute> = Vec::new();
    let mut links = BTreeMap::new();

    if let Some(lake_dir) = &config.lake_dir {
        let joinable = discover_joinable(
            &dataset,
            lake_dir,
            config.min_containment,
            &config.missing_marker,
        )?;
        // One join per table: the best-contained key column wins.
        let mut best: BTreeMap<PathBuf, &JoinCandidate> = BTreeMap::new();
        for cand in &joinable {
            best.entry(cand.table_path.clone()).or_insert(cand);
        }
        for cand in best.values() {
            candidates.extend(extract_from_table(&dataset, cand, &config.missing_marker)?);
        }
    }
    if let Some(kg_tsv) = &config.kg_tsv {
        let kg = KgIndex::load(kg_tsv, &config.kg_label_predicate)?;
        links = link_entities(&dataset, &kg);
        candidates.extend(extract_kg_properties(&dataset, &links, &kg, config.kg_hops));
    }
    if config.lake_dir.is_none() && config.kg_tsv.is_none() {
        eprintln!("warning: no lake_dir or kg_tsv configured; extracting nothing");
    }
    candidates.sort_by(|a, b| a.name.cmp(&b.name));

    let report = ExtractionReport::new(&dataset, &candidates, &links);
    write_candidates_csv(&artifacts, &dataset, &candidates, &config.missing_marker)?;
    artifacts.write_json("candidates.json", &CandidatesFile { report, candidates })?;
    println!("extract: wrote {}", artifacts.path("candidates.json").display());
    Ok(())
}

fn write_candidates_csv(
    artifacts: &Artifacts,
    dataset: &Dataset,
    candidates: &[CandidateAttribute],
    missing_marker: &str,
) -> Result<(), CliError> {
    let path = artifacts.path("candidates.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec![dataset.roles().key.clone()];
    header.extend(candidates.iter().map(|c| c.name.clone()));
    w.write_record(&header).map_err(to_io)?;
    let keys = dataset.key_values();
    for (row, key) in keys.iter().enumerate() {
        let mut record = vec![key.clone()];
        for c in candidates {
            let cell = &c.values[row];
            record.push(if cell.is_empty() {
                missing_marker.to_string()
            } else {
                cell.join("|")
            });
        }
        w.write_record(&record).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(to_io)
}

fn to_io(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

pub fn cmd_organize(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir)?;
    let dataset = load_input(config)?;
    let candidates: CandidatesFile = artifacts.read_json("candidates.json")?;
    let organizer_config = OrganizerConfig {
        alpha_bias: config.alpha_bias,
        coverage_floor: config.coverage_floor,
    };
    let (augmented, log) = organize(&dataset, &candidates.candidates, &organizer_config)?;
    write_csv(
        &augmented.dataset,
        artifacts.path("augmented.csv"),
        &config.missing_marker,
    )?;
    artifacts.write_json(
        "organizer.json",
        &OrganizerFile {
            log,
            weights: augmented.weights,
        },
    )?;
    println!("organize: wrote {}", artifacts.path("augmented.csv").display());
    Ok(())
}

fn build_params(config: &PipelineConfig) -> BuildParams {
    BuildParams {
        alpha: config.alpha,
        max_cond: config.max_cond,
        split_threshold: config.split_threshold,
        max_clusters: config.max_clusters,
    }
}

pub fn cmd_build(config: &PipelineConfig, mode: Mode) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir)?;
    let dataset = load_augmented(config, &artifacts)?;
    let recorder = RecordingOracle::new(build_backend(config)?);
    let params = build_params(config);
    let (cdag, log): (CDag, BuildLog) = match mode {
        Mode::Hybrid => build_cdag(&dataset, &recorder, &params)?,
        Mode::Pc => build_cdag_baseline(&dataset, &recorder, &params, BaselineKind::Pc)?,
        Mode::Bic => build_cdag_baseline(&dataset, &recorder, &params, BaselineKind::Bic)?,
    };
    artifacts.write_json("cdag.json", &cdag.to_json())?;
    fs::write(artifacts.path("cdag.dot"), cdag.to_dot())?;
    artifacts.write_json("build_log.json", &log)?;
    recorder.write_replay_file(&artifacts.path("replay.json"))?;
    println!(
        "build: {} clusters, {} edges -> {}",
        cdag.cluster_map.len(),
        cdag.edges.len(),
        artifacts.path("cdag.json").display()
    );
    Ok(())
}

fn load_cdag(artifacts: &Artifacts) -> Result<CDag, CliError> {
    let json: CdagJson = artifacts.read_json("cdag.json")?;
    Ok(CDag::from_json(&json)?)
}

fn load_weights(artifacts: &Artifacts) -> BTreeMap<String, WeightVector> {
    artifacts
        .read_json::<OrganizerFile>("organizer.json")
        .map(|f| f.weights)
        .unwrap_or_default()
}

pub fn cmd_analyze(config: &PipelineConfig, kind: EffectKind) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir)?;
    let dataset = load_augmented(config, &artifacts)?;
    let cdag = load_cdag(&artifacts)?;
    let weights = load_weights(&artifacts);
    let report: AnalysisReport = estimate_effect(&dataset, &weights, &cdag, kind)?;
    artifacts.write_json("analysis.json", &report)?;
    println!(
        "analyze: {:?} effect {:.4} (stderr {:.4}) -> {}",
        kind,
        report.estimate.value,
        report.estimate.stderr,
        artifacts.path("analysis.json").display()
    );
    Ok(())
}

pub fn cmd_evaluate(config: &PipelineConfig) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir)?;
    let gt_path = config
        .ground_truth
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluate requires ground_truth in config".to_string()))?;
    let dataset = load_augmented(config, &artifacts)?;
    let cdag = load_cdag(&artifacts)?;
    let weights = load_weights(&artifacts);
    let text = fs::read_to_string(gt_path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", gt_path.display())))?;
    let gt_json: CdagJson = serde_json::from_str(&text)?;
    let gt = GroundTruth::new(CDag::from_json(&gt_json)?, gt_path.display().to_string())
        .map_err(CliError::from)?;
    let report = evaluate(&cdag, &gt, &dataset, &weights)?;
    artifacts.write_json("report.json", &report)?;
    fs::write(artifacts.path("report.txt"), report.render_table())?;
    print!("{}", report.render_table());
    Ok(())
}

pub fn cmd_full(config: &PipelineConfig, mode: Mode, kind: EffectKind) -> Result<(), CliError> {
    let artifacts = Artifacts::new(&config.output_dir)?;
    let mut timings: BTreeMap<String, u128> = BTreeMap::new();
    let mut stage = |name: &str,
                     f: &mut dyn FnMut() -> Result<(), CliError>|
     -> Result<(), CliError> {
        let start = Instant::now();
        f()?;
        timings.insert(name.to_string(), start.elapsed().as_millis());
        Ok(())
    };
    stage("extract", &mut || cmd_extract(config))?;
    stage("organize", &mut || cmd_organize(config))?;
    stage("build", &mut || cmd_build(config, mode))?;
    stage("analyze", &mut || cmd_analyze(config, kind))?;
    if config.ground_truth.is_some() {
        stage("evaluate", &mut || cmd_evaluate(config))?;
    }
    let manifest = RunManifest {
        config: config.snapshot(),
        input_digests: digest_inputs(config)?,
        stage_timings_ms: timings,
        artifacts: artifact_paths(config, &artifacts),
    };
    let path = artifacts.path("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    println!("full: manifest -> {}", path.display());
    Ok(())
}

fn artifact_paths(config: &PipelineConfig, artifacts: &Artifacts) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    let mut names = vec![
        "candidates.csv",
        "candidates.json",
        "augmented.csv",
        "organizer.json",
        "cdag.json",
        "cdag.dot",
        "build_log.json",
        "replay.json",
        "analysis.json",
    ];
    if config.ground_truth.is_some() {
        names.push("report.json");
        names.push("report.txt");
    }
    for name in names {
        map.insert(name.to_string(), artifacts.path(name).display().to_string());
    }
    map
}

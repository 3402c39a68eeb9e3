//! Turn raw candidate attributes into a clean augmented dataset:
//! functional-dependency pruning, missingness and selection-bias
//! assessment with inverse-probability weights, and multi-valued
//! aggregation.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::CandidateAttribute;
use crate::stats;
use crate::table::{encode, Column, Dataset, Dtype, TableError};

#[derive(Debug, Error)]
pub enum OrganizeError {
    #[error("candidate {0} has no missing cells; weights are not applicable")]
    NoMissingCells(String),
    #[error("candidate {0} has no observed cells")]
    AllMissing(String),
    #[error("covariate {0} is not fully observed")]
    CovariateNotObserved(String),
    #[error("candidate name collides with existing column: {0}")]
    NameCollision(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

/// Verdict for one exact functional dependency `determinant => dependent`,
/// evaluated on rows where both cells are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDependency {
    pub determinant: String,
    pub dependent: String,
    pub holds: bool,
    /// Determinant values mapping to two or more dependent values.
    pub violations: usize,
}

/// Evaluate one exact FD between two cell vectors.
pub fn evaluate_fd(
    determinant_name: &str,
    dependent_name: &str,
    determinant: &[Option<String>],
    dependent: &[Option<String>],
) -> FunctionalDependency {
    let mut groups: BTreeMap<&str, &str> = BTreeMap::new();
    let mut violated: BTreeMap<&str, bool> = BTreeMap::new();
    for (d, v) in determinant.iter().zip(dependent) {
        let (Some(d), Some(v)) = (d.as_deref(), v.as_deref()) else {
            continue;
        };
        match groups.get(d) {
            None => {
                groups.insert(d, v);
            }
            Some(&seen) if seen != v => {
                violated.insert(d, true);
            }
            Some(_) => {}
        }
    }
    let violations = violated.len();
    FunctionalDependency {
        determinant: determinant_name.to_string(),
        dependent: dependent_name.to_string(),
        holds: violations == 0,
        violations,
    }
}

fn column_cells(dataset: &Dataset, name: &str) -> Vec<Option<String>> {
    let col = dataset.column(name).expect("validated column");
    (0..dataset.n_rows()).map(|r| col.cell_str(r)).collect()
}

fn candidate_cells(candidate: &CandidateAttribute) -> Vec<Option<String>> {
    candidate
        .values
        .iter()
        .map(|v| {
            assert!(v.len() <= 1, "aggregate multi-valued cells first");
            v.first().cloned()
        })
        .collect()
}

/// For each candidate, evaluate the four exact FDs against the exposure
/// and outcome: A=>T, T=>A, A=>O, O=>A.
pub fn detect_fds(
    dataset: &Dataset,
    candidates: &[CandidateAttribute],
) -> Vec<FunctionalDependency> {
    let exposure = &dataset.roles().exposure;
    let outcome = &dataset.roles().outcome;
    let t_cells = column_cells(dataset, exposure);
    let o_cells = column_cells(dataset, outcome);
    let mut out = Vec::with_capacity(candidates.len() * 4);
    for c in candidates {
        let a = candidate_cells(c);
        out.push(evaluate_fd(&c.name, exposure, &a, &t_cells));
        out.push(evaluate_fd(exposure, &c.name, &t_cells, &a));
        out.push(evaluate_fd(&c.name, outcome, &a, &o_cells));
        out.push(evaluate_fd(outcome, &c.name, &o_cells, &a));
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DroppedCandidate {
    pub name: String,
    pub reason: String,
}

/// Drop candidates whose exact dependencies break strict positivity.
///
/// Exact-FD drops apply only when both the candidate and the FD's
/// determinant are categorical: on continuous values every all-distinct
/// column satisfies any FD vacuously, which would wipe out legitimate
/// numeric attributes at small n. Constant candidates are dropped
/// regardless of dtype, as are categorical candidates bijective with the
/// key.
pub fn prune_fd_attributes(
    dataset: &Dataset,
    candidates: Vec<CandidateAttribute>,
    fds: &[FunctionalDependency],
) -> (Vec<CandidateAttribute>, Vec<DroppedCandidate>) {
    let key_cells = column_cells(dataset, &dataset.roles().key);
    let categorical_column = |name: &str| {
        dataset
            .column(name)
            .map(|c| c.dtype() == Dtype::Categorical)
            .unwrap_or(false)
    };
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for c in candidates {
        let cells = candidate_cells(&c);
        let mut distinct: Vec<&str> = cells.iter().flatten().map(|s| s.as_str()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() <= 1 {
            dropped.push(DroppedCandidate {
                name: c.name,
                reason: "constant".to_string(),
            });
            continue;
        }
        if c.dtype() == Dtype::Categorical {
            let holding = fds.iter().find(|fd| {
                fd.holds
                    && (fd.determinant == c.name
                        || (fd.dependent == c.name && categorical_column(&fd.determinant)))
            });
            if let Some(fd) = holding {
                dropped.push(DroppedCandidate {
                    name: c.name,
                    reason: format!("fd: {} => {}", fd.determinant, fd.dependent),
                });
                continue;
            }
            let to_key = evaluate_fd(&c.name, &dataset.roles().key, &cells, &key_cells);
            if to_key.holds {
                dropped.push(DroppedCandidate {
                    name: c.name,
                    reason: "key-equivalent".to_string(),
                });
                continue;
            }
        }
        kept.push(c);
    }
    (kept, dropped)
}

/// Association between a column's missingness and the exposure/outcome,
/// plus a recoverability verdict for inverse-probability weighting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MissingnessReport {
    pub column: String,
    pub missing_fraction: f64,
    pub p_vs_exposure: f64,
    pub p_vs_outcome: f64,
    pub biased: bool,
    pub recoverable: bool,
}

const RECOVERABLE_AUC: f64 = 0.6;

/// Test the missingness indicator against the exposure and outcome:
/// G-test for categorical partners, point-biserial t-test for numeric.
/// Recoverable means a logistic model of the indicator on the fully
/// observed covariates reaches in-sample AUC >= 0.6, or no bias was
/// detected in the first place.
pub fn assess_missingness(
    dataset: &Dataset,
    candidate: &CandidateAttribute,
    alpha_bias: f64,
) -> MissingnessReport {
    assert!(alpha_bias > 0.0 && alpha_bias < 1.0);
    let observed: Vec<bool> = candidate.values.iter().map(|v| !v.is_empty()).collect();
    let n = observed.len();
    let n_missing = observed.iter().filter(|&&o| !o).count();
    let missing_fraction = n_missing as f64 / n as f64;
    if n_missing == 0 || n_missing == n {
        // Degenerate indicator: nothing to test.
        return MissingnessReport {
            column: candidate.name.clone(),
            missing_fraction,
            p_vs_exposure: 1.0,
            p_vs_outcome: 1.0,
            biased: false,
            recoverable: true,
        };
    }
    let p_vs_exposure = indicator_association_p(dataset.exposure(), &observed);
    let p_vs_outcome = indicator_association_p(dataset.outcome(), &observed);
    let biased = p_vs_exposure.min(p_vs_outcome) < alpha_bias;
    let recoverable = if !biased {
        true
    } else {
        indicator_auc(dataset, candidate, &observed)
            .map(|a| a >= RECOVERABLE_AUC)
            .unwrap_or(false)
    };
    MissingnessReport {
        column: candidate.name.clone(),
        missing_fraction,
        p_vs_exposure,
        p_vs_outcome,
        biased,
        recoverable,
    }
}

fn indicator_association_p(partner: &Column, observed: &[bool]) -> f64 {
    match partner.dtype() {
        Dtype::Categorical => {
            // G-test on the 2 x k table of indicator vs partner levels.
            let mut levels: Vec<String> = Vec::new();
            let mut table: Vec<[f64; 2]> = Vec::new();
            for (row, &obs) in observed.iter().enumerate() {
                let v = partner.cell_str(row).expect("role columns fully observed");
                let idx = match levels.iter().position(|l| *l == v) {
                    Some(i) => i,
                    None => {
                        levels.push(v);
                        table.push([0.0, 0.0]);
                        levels.len() - 1
                    }
                };
                table[idx][usize::from(obs)] += 1.0;
            }
            if levels.len() < 2 {
                return 1.0;
            }
            let total: f64 = table.iter().map(|r| r[0] + r[1]).sum();
            let col_sum = [
                table.iter().map(|r| r[0]).sum::<f64>(),
                table.iter().map(|r| r[1]).sum::<f64>(),
            ];
            let mut g = 0.0;
            for row in &table {
                let row_sum = row[0] + row[1];
                for j in 0..2 {
                    if row[j] > 0.0 {
                        let expected = row_sum * col_sum[j] / total;
                        g += 2.0 * row[j] * (row[j] / expected).ln();
                    }
                }
            }
            stats::chi2_sf(g, (levels.len() - 1) as f64)
        }
        Dtype::Numeric => {
            let mut yes = Vec::new();
            let mut no = Vec::new();
            for (row, &obs) in observed.iter().enumerate() {
                let v = partner.numeric_cell(row).expect("role columns fully observed");
                if obs {
                    yes.push(v);
                } else {
                    no.push(v);
                }
            }
            let (n1, n0) = (yes.len() as f64, no.len() as f64);
            let (m1, m0) = (stats::mean(&yes), stats::mean(&no));
            let sp2 = ((n1 - 1.0) * stats::variance(&yes) + (n0 - 1.0) * stats::variance(&no))
                / (n1 + n0 - 2.0);
            if !(sp2 > 0.0) {
                return if (m1 - m0).abs() < 1e-12 { 1.0 } else { 0.0 };
            }
            let t = (m1 - m0) / (sp2 * (1.0 / n1 + 1.0 / n0)).sqrt();
            stats::t_two_sided_p(t, n1 + n0 - 2.0)
        }
    }
}

/// Fully observed non-key columns, excluding the candidate itself.
fn observed_covariates(dataset: &Dataset, exclude: &str) -> Vec<String> {
    dataset
        .columns()
        .iter()
        .filter(|c| {
            c.name != dataset.roles().key && c.name != exclude && c.missing_count() == 0
        })
        .map(|c| c.name.clone())
        .collect()
}

fn indicator_auc(
    dataset: &Dataset,
    candidate: &CandidateAttribute,
    observed: &[bool],
) -> Option<f64> {
    let covariates = observed_covariates(dataset, &candidate.name);
    if covariates.is_empty() {
        return None;
    }
    let design = logistic_design(dataset, &covariates).ok()?;
    let fit = stats::logistic_fit(&design, observed).ok()?;
    Some(stats::auc(&fit.probs, observed))
}

fn logistic_design(dataset: &Dataset, covariates: &[String]) -> Result<DMatrix<f64>, OrganizeError> {
    let enc = encode(dataset, &covariates.to_vec())?;
    if enc.n_rows() != dataset.n_rows() {
        // Covariates must be fully observed for the propensity model.
        let missing = covariates
            .iter()
            .find(|c| dataset.column(c).map(|col| col.missing_count() > 0).unwrap_or(true));
        return Err(OrganizeError::CovariateNotObserved(
            missing.cloned().unwrap_or_default(),
        ));
    }
    let n = enc.n_rows();
    let p = covariates.len();
    let mut x = DMatrix::from_element(n, p + 1, 1.0);
    for j in 0..p {
        let mut col = enc.column(j);
        stats::standardize(&mut col);
        for i in 0..n {
            x[(i, j + 1)] = col[i];
        }
    }
    Ok(x)
}

/// Per-row inverse-probability weights for one partially observed column.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightVector {
    pub target_column: String,
    /// Aligned to input rows; missing rows carry weight 0.
    pub weights: Vec<f64>,
    /// The propensity fit hit separation and fell back to a ridge penalty.
    pub separation: bool,
}

impl WeightVector {
    pub fn summary(&self) -> WeightSummary {
        let positive: Vec<f64> = self.weights.iter().copied().filter(|&w| w > 0.0).collect();
        WeightSummary {
            min: positive.iter().copied().fold(f64::INFINITY, f64::min),
            max: positive.iter().copied().fold(0.0, f64::max),
            mean: stats::mean(&positive),
            separation: self.separation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub separation: bool,
}

const PROB_FLOOR: f64 = 0.01;

/// Fit a logistic regression of the observed-indicator on the covariates
/// and weight each observed row by the inverse of its fitted probability.
pub fn compute_ipw_weights(
    dataset: &Dataset,
    candidate: &CandidateAttribute,
    covariates: &[String],
) -> Result<WeightVector, OrganizeError> {
    let observed: Vec<bool> = candidate.values.iter().map(|v| !v.is_empty()).collect();
    let n_obs = observed.iter().filter(|&&o| o).count();
    if n_obs == observed.len() {
        return Err(OrganizeError::NoMissingCells(candidate.name.clone()));
    }
    if n_obs == 0 {
        return Err(OrganizeError::AllMissing(candidate.name.clone()));
    }
    let design = logistic_design(dataset, covariates)?;
    let fit = stats::logistic_fit(&design, &observed)?;
    let weights = observed
        .iter()
        .zip(&fit.probs)
        .map(|(&obs, &p)| {
            if obs {
                1.0 / p.clamp(PROB_FLOOR, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(WeightVector {
        target_column: candidate.name.clone(),
        weights,
        separation: fit.separation,
    })
}

/// Collapse multi-valued cells: numeric cells average, categorical cells
/// take the mode with a lexicographic tie-break. When any cell had
/// multiplicity above one, a companion `name#count` numeric attribute is
/// emitted alongside.
pub fn aggregate_multivalued(candidate: &CandidateAttribute) -> Vec<CandidateAttribute> {
    if !candidate.is_multivalued() {
        return vec![candidate.clone()];
    }
    let numeric = candidate.dtype() == Dtype::Numeric;
    let mut values = Vec::with_capacity(candidate.values.len());
    let mut counts = Vec::with_capacity(candidate.values.len());
    for cell in &candidate.values {
        counts.push(if cell.is_empty() {
            Vec::new()
        } else {
            vec![format!("{}", cell.len())]
        });
        if cell.is_empty() {
            values.push(Vec::new());
        } else if numeric {
            let sum: f64 = cell.iter().map(|v| v.trim().parse::<f64>().expect("numeric")).sum();
            values.push(vec![format!("{}", sum / cell.len() as f64)]);
        } else {
            let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
            for v in cell {
                *tally.entry(v.as_str()).or_default() += 1;
            }
            let best = tally
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(v, _)| v.to_string())
                .expect("nonempty cell");
            values.push(vec![best]);
        }
    }
    vec![
        CandidateAttribute {
            name: candidate.name.clone(),
            values,
            provenance: candidate.provenance.clone(),
        },
        CandidateAttribute {
            name: format!("{}#count", candidate.name),
            values: counts,
            provenance: candidate.provenance.clone(),
        },
    ]
}

/// Per-candidate record in the organizer log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateLogEntry {
    pub name: String,
    pub fds: Vec<FunctionalDependency>,
    pub missingness: Option<MissingnessReport>,
    /// "kept" or the drop reason.
    pub outcome: String,
    pub weight_summary: Option<WeightSummary>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OrganizerLog {
    pub entries: Vec<CandidateLogEntry>,
}

/// The assembled augmented dataset plus the per-column weights attached
/// to biased-but-recoverable columns.
#[derive(Debug, Clone)]
pub struct AugmentedDataset {
    pub dataset: Dataset,
    pub weights: BTreeMap<String, WeightVector>,
}

#[derive(Debug, Clone, Copy)]
pub struct OrganizerConfig {
    pub alpha_bias: f64,
    pub coverage_floor: f64,
}

impl Default for OrganizerConfig {
    fn default() -> Self {
        OrganizerConfig {
            alpha_bias: 0.05,
            coverage_floor: 0.5,
        }
    }
}

/// Append kept candidates as columns, dropping low-coverage and
/// biased-unrecoverable ones, and attach IPW weights where needed.
pub fn assemble_augmented(
    dataset: &Dataset,
    kept: Vec<CandidateAttribute>,
    reports: &BTreeMap<String, MissingnessReport>,
    weights: BTreeMap<String, WeightVector>,
    config: &OrganizerConfig,
    log: &mut OrganizerLog,
) -> Result<AugmentedDataset, OrganizeError> {
    let mut columns = Vec::new();
    let mut attached = BTreeMap::new();
    let set_outcome = |log: &mut OrganizerLog, name: &str, outcome: String| {
        if let Some(e) = log.entries.iter_mut().find(|e| e.name == name) {
            e.outcome = outcome;
        }
    };
    for c in kept {
        if dataset.column(&c.name).is_some() {
            return Err(OrganizeError::NameCollision(c.name));
        }
        let coverage = c.coverage();
        if coverage < config.coverage_floor {
            set_outcome(log, &c.name, format!("dropped: low-coverage ({coverage:.2})"));
            continue;
        }
        if let Some(r) = reports.get(&c.name) {
            if r.biased && !r.recoverable {
                set_outcome(log, &c.name, "dropped: biased-unrecoverable".to_string());
                continue;
            }
            if r.biased && r.recoverable {
                if let Some(w) = weights.get(&c.name) {
                    attached.insert(c.name.clone(), w.clone());
                    if let Some(e) = log.entries.iter_mut().find(|e| e.name == c.name) {
                        e.weight_summary = Some(w.summary());
                    }
                }
            }
        }
        set_outcome(log, &c.name, "kept".to_string());
        columns.push(c.to_column());
    }
    let dataset = dataset.with_columns(columns)?;
    Ok(AugmentedDataset {
        dataset,
        weights: attached,
    })
}

/// Full organizer pass: aggregate, FD-prune, assess missingness, compute
/// weights, and assemble the augmented dataset.
pub fn organize(
    dataset: &Dataset,
    candidates: &[CandidateAttribute],
    config: &OrganizerConfig,
) -> Result<(AugmentedDataset, OrganizerLog), OrganizeError> {
    let mut aggregated = Vec::new();
    for c in candidates {
        aggregated.extend(aggregate_multivalued(c));
    }
    aggregated.sort_by(|a, b| a.name.cmp(&b.name));

    let fds = detect_fds(dataset, &aggregated);
    let mut log = OrganizerLog::default();
    for c in &aggregated {
        log.entries.push(CandidateLogEntry {
            name: c.name.clone(),
            fds: fds
                .iter()
                .filter(|fd| fd.determinant == c.name || fd.dependent == c.name)
                .cloned()
                .collect(),
            missingness: None,
            outcome: "kept".to_string(),
            weight_summary: None,
        });
    }
    let (kept, dropped) = prune_fd_attributes(dataset, aggregated, &fds);
    for d in &dropped {
        if let Some(e) = log.entries.iter_mut().find(|e| e.name == d.name) {
            e.outcome = format!("dropped: {}", d.reason);
        }
    }

    let mut reports = BTreeMap::new();
    let mut weight_map = BTreeMap::new();
    for c in &kept {
        let report = assess_missingness(dataset, c, config.alpha_bias);
        if report.biased && report.recoverable {
            let covariates = observed_covariates(dataset, &c.name);
            if let Ok(w) = compute_ipw_weights(dataset, c, &covariates) {
                weight_map.insert(c.name.clone(), w);
            }
        }
        if let Some(e) = log.entries.iter_mut().find(|e| e.name == c.name) {
            e.missingness = Some(report.clone());
        }
        reports.insert(c.name.clone(), report);
    }
    let augmented = assemble_augmented(dataset, kept, &reports, weight_map, config, &mut log)?;
    Ok((augmented, log))
}

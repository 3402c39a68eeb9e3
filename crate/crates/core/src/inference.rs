//! Identification and estimation on the cluster-level DAG: d-separation,
//! backdoor adjustment sets, mediators, and linear effect estimates on
//! cluster representatives.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdag::{cluster_representatives, CDag, CdagError};
use crate::graph::{Dag, GraphError};
use crate::organize::WeightVector;
use crate::stats;
use crate::table::{Dataset, Dtype, TableError};

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("node {0} not in graph")]
    UnknownNode(usize),
    #[error("effect not identified by the backdoor criterion")]
    NotIdentified,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cdag(#[from] CdagError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

/// d-separation by reachability: X and Y are separated given Z iff no
/// active path connects them. Chains and forks are blocked by
/// conditioning; colliders are active iff the collider or one of its
/// descendants is conditioned on.
pub fn d_separated(g: &Dag, x: usize, y: usize, z: &BTreeSet<usize>) -> Result<bool, InferenceError> {
    let n = g.n();
    for &v in z.iter().chain([x, y].iter()) {
        if v >= n {
            return Err(InferenceError::UnknownNode(v));
        }
    }
    assert!(x != y && !z.contains(&x) && !z.contains(&y));
    // Z together with its ancestors: the set that activates colliders.
    let mut collider_active: BTreeSet<usize> = z.clone();
    for &v in z {
        collider_active.extend(g.ancestors(v));
    }
    // States: (node, arrived-from-parent?). Arriving from a parent means
    // the trail enters along an edge into the node.
    let mut visited: BTreeSet<(usize, bool)> = BTreeSet::new();
    let mut queue: VecDeque<(usize, bool)> = VecDeque::new();
    // Leaving x in both directions.
    for p in g.parents(x) {
        queue.push_back((p, false));
    }
    for c in g.children(x) {
        queue.push_back((c, true));
    }
    while let Some((v, from_parent)) = queue.pop_front() {
        if !visited.insert((v, from_parent)) {
            continue;
        }
        if v == y {
            return Ok(false);
        }
        if from_parent {
            // Chain v continues to children unless blocked; collider at v
            // bounces back to parents when activated.
            if !z.contains(&v) {
                for c in g.children(v) {
                    queue.push_back((c, true));
                }
            }
            if collider_active.contains(&v) {
                for p in g.parents(v) {
                    queue.push_back((p, false));
                }
            }
        } else if !z.contains(&v) {
            for p in g.parents(v) {
                queue.push_back((p, false));
            }
            for c in g.children(v) {
                queue.push_back((c, true));
            }
        }
    }
    Ok(true)
}

/// A backdoor adjustment set over cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentSet {
    pub clusters: BTreeSet<usize>,
    pub minimal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackdoorSearch {
    /// All inclusion-minimal valid sets, ordered by size then members.
    pub sets: Vec<AdjustmentSet>,
    pub identified: bool,
}

/// Enumerate inclusion-minimal backdoor sets: subsets of non-descendants
/// of the exposure (ascending size, capped at `max_size`) that d-separate
/// exposure and outcome once the exposure's outgoing edges are removed.
pub fn backdoor_sets(
    g: &Dag,
    exposure: usize,
    outcome: usize,
    max_size: usize,
) -> Result<BackdoorSearch, InferenceError> {
    assert!(exposure != outcome);
    let n = g.n();
    if exposure >= n || outcome >= n {
        return Err(InferenceError::UnknownNode(exposure.max(outcome)));
    }
    let descendants = g.descendants(exposure);
    let candidates: Vec<usize> = (0..n)
        .filter(|&v| v != exposure && v != outcome && !descendants.contains(&v))
        .collect();
    let trimmed = g.without_outgoing(exposure);
    let mut minimal: Vec<BTreeSet<usize>> = Vec::new();
    for size in 0..=max_size.min(candidates.len()) {
        for subset in crate::discovery::combinations(&candidates, size) {
            let z: BTreeSet<usize> = subset.into_iter().collect();
            if minimal.iter().any(|m| m.is_subset(&z)) {
                continue;
            }
            if d_separated(&trimmed, exposure, outcome, &z)? {
                minimal.push(z);
            }
        }
    }
    minimal.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    let identified = !minimal.is_empty();
    Ok(BackdoorSearch {
        sets: minimal
            .into_iter()
            .map(|clusters| AdjustmentSet {
                clusters,
                minimal: true,
            })
            .collect(),
        identified,
    })
}

/// Nodes lying on at least one directed path from the exposure to the
/// outcome, endpoints excluded.
pub fn mediators(g: &Dag, exposure: usize, outcome: usize) -> BTreeSet<usize> {
    assert!(exposure != outcome);
    let mut down = g.descendants(exposure);
    let up = g.ancestors(outcome);
    down.retain(|v| up.contains(v));
    down.remove(&exposure);
    down.remove(&outcome);
    down
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Direct,
    Total,
}

/// A standardized linear effect estimate on cluster representatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    /// Standardized regression coefficient of the exposure representative.
    pub value: f64,
    pub stderr: f64,
    pub adjusted_for: BTreeSet<usize>,
    pub n_used: usize,
    pub notes: Vec<String>,
}

/// Identification plus estimation, serialized as the analysis report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub backdoor_sets: Vec<AdjustmentSet>,
    pub mediators: BTreeSet<usize>,
    pub chosen_set: BTreeSet<usize>,
    pub estimate: EffectEstimate,
}

/// Estimate the direct or total effect of the exposure cluster on the
/// outcome cluster by ordinary least squares on standardized cluster
/// representatives: the total effect adjusts for the smallest minimal
/// backdoor set, the direct effect additionally includes all mediators.
/// Attached IPW weights of the involved member columns multiply in.
pub fn estimate_effect(
    dataset: &Dataset,
    weights: &BTreeMap<String, WeightVector>,
    cdag: &CDag,
    kind: EffectKind,
) -> Result<AnalysisReport, InferenceError> {
    let g = cdag.to_cluster_dag()?;
    let t = cdag.cluster_map.exposure_cluster;
    let o = cdag.cluster_map.outcome_cluster;
    let search = backdoor_sets(&g, t, o, g.n())?;
    if !search.identified {
        return Err(InferenceError::NotIdentified);
    }
    let chosen = search.sets[0].clusters.clone();
    let meds = mediators(&g, t, o);
    let mut adjusted: BTreeSet<usize> = chosen.clone();
    if kind == EffectKind::Direct {
        adjusted.extend(meds.iter().copied());
    }

    let reps = cluster_representatives(dataset, &cdag.cluster_map)?;
    let n = reps.n_rows();
    let mut notes = Vec::new();

    // Row weights: product of attached per-column weights over every
    // involved member column. Representatives already use complete rows,
    // so all involved weights are positive there.
    let mut involved_clusters: BTreeSet<usize> = adjusted.clone();
    involved_clusters.insert(t);
    involved_clusters.insert(o);
    let mut row_weights = vec![1.0; n];
    let mut weighted = false;
    for &cid in &involved_clusters {
        for member in &cdag.cluster_map.clusters[cid].members {
            if let Some(w) = weights.get(member) {
                weighted = true;
                for (i, &row) in reps.kept_rows.iter().enumerate() {
                    row_weights[i] *= w.weights[row].max(0.0);
                }
            }
        }
    }
    if weighted {
        notes.push("inverse-probability weights applied".to_string());
    }

    // Exposure columns: the standardized representative, or one-hot
    // dummies for a multi-level categorical exposure.
    let exposure_cols = exposure_design(dataset, cdag, &reps.kept_rows, &mut notes)?;
    let n_t = exposure_cols.len();

    let mut y = DVector::from_vec(reps.column(o));
    standardize_vec(&mut y);

    let p = 1 + n_t + adjusted.len();
    let mut x = DMatrix::from_element(n, p, 1.0);
    for (j, col) in exposure_cols.iter().enumerate() {
        for i in 0..n {
            x[(i, j + 1)] = col[i];
        }
    }
    for (j, &cid) in adjusted.iter().enumerate() {
        let mut col = reps.column(cid);
        stats::standardize(&mut col);
        for i in 0..n {
            x[(i, 1 + n_t + j)] = col[i];
        }
    }
    let fit = stats::wls(&x, &y, Some(&row_weights))?;
    if fit.ridged {
        notes.push("singular design: ridge-stabilized".to_string());
    }
    // The exposure coefficient; for one-hot exposures the one with the
    // largest magnitude, reported as a documented convention.
    let (value, stderr) = (1..=n_t)
        .map(|j| (fit.coefs[j], fit.stderr[j]))
        .max_by(|a, b| {
            a.0.abs()
                .partial_cmp(&b.0.abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one exposure column");
    Ok(AnalysisReport {
        backdoor_sets: search.sets,
        mediators: meds,
        chosen_set: chosen,
        estimate: EffectEstimate {
            kind,
            value,
            stderr,
            adjusted_for: adjusted,
            n_used: fit.n,
            notes,
        },
    })
}

fn standardize_vec(v: &mut DVector<f64>) {
    let mut tmp: Vec<f64> = v.iter().copied().collect();
    stats::standardize(&mut tmp);
    for (i, val) in tmp.into_iter().enumerate() {
        v[i] = val;
    }
}

/// Standardized exposure columns over the representative rows.
fn exposure_design(
    dataset: &Dataset,
    cdag: &CDag,
    kept_rows: &[usize],
    notes: &mut Vec<String>,
) -> Result<Vec<Vec<f64>>, InferenceError> {
    let t_cluster = &cdag.cluster_map.clusters[cdag.cluster_map.exposure_cluster];
    let member = t_cluster.members.iter().next().expect("singleton");
    let col = dataset
        .column(member)
        .ok_or_else(|| TableError::MissingColumn(member.clone()))?;
    match col.dtype() {
        Dtype::Numeric => {
            let mut v: Vec<f64> = kept_rows
                .iter()
                .map(|&r| col.numeric_cell(r).expect("complete rows"))
                .collect();
            stats::standardize(&mut v);
            Ok(vec![v])
        }
        Dtype::Categorical => {
            let cells: Vec<String> = kept_rows
                .iter()
                .map(|&r| col.cell_str(r).expect("complete rows"))
                .collect();
            let mut levels: Vec<String> = Vec::new();
            for c in &cells {
                if !levels.contains(c) {
                    levels.push(c.clone());
                }
            }
            if levels.len() <= 2 {
                let mut v: Vec<f64> = cells
                    .iter()
                    .map(|c| if *c == levels[0] { 0.0 } else { 1.0 })
                    .collect();
                stats::standardize(&mut v);
                Ok(vec![v])
            } else {
                // Multi-level exposure: one-hot with the first-appearing
                // level as reference; the reported value is the largest
                // absolute standardized coefficient.
                notes.push(format!(
                    "multi-level exposure ({} levels): max |coefficient| convention",
                    levels.len()
                ));
                let mut cols = Vec::new();
                for level in levels.iter().skip(1) {
                    let mut v: Vec<f64> = cells
                        .iter()
                        .map(|c| if c == level { 1.0 } else { 0.0 })
                        .collect();
                    stats::standardize(&mut v);
                    cols.push(v);
                }
                Ok(cols)
            }
        }
    }
}

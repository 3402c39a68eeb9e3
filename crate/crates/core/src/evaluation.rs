//! Score a generated C-DAG against a ground-truth C-DAG: directed-edge
//! inclusion and absence precision/recall/F1, plus the estimated direct
//! effect between exposure and outcome.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cdag::{CDag, CdagError};
use crate::inference::{estimate_effect, EffectKind, InferenceError};
use crate::organize::WeightVector;
use crate::table::Dataset;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("topic sets differ; only in prediction: {only_pred:?}, only in ground truth: {only_gt:?}")]
    TopicMismatch {
        only_pred: Vec<String>,
        only_gt: Vec<String>,
    },
    #[error("ground truth topics are not unique: {0}")]
    DuplicateTopic(String),
    #[error(transparent)]
    Cdag(#[from] CdagError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// An expert-provided reference C-DAG; topics act as node identities.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub cdag: CDag,
    pub source: String,
}

impl GroundTruth {
    pub fn new(cdag: CDag, source: impl Into<String>) -> Result<Self, EvalError> {
        let mut seen = BTreeSet::new();
        for c in &cdag.cluster_map.clusters {
            if !seen.insert(normalize_topic(&c.topic)) {
                return Err(EvalError::DuplicateTopic(c.topic.clone()));
            }
        }
        // Acyclicity is enforced by the cluster DAG conversion.
        cdag.to_cluster_dag().map_err(CdagError::from)?;
        Ok(GroundTruth {
            cdag,
            source: source.into(),
        })
    }
}

fn normalize_topic(t: &str) -> String {
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Identity mapping on normalized topics; errors out with the symmetric
/// difference when the sets differ.
pub fn align_nodes(pred: &CDag, gt: &GroundTruth) -> Result<BTreeMap<String, String>, EvalError> {
    let pred_topics: BTreeSet<String> = pred
        .cluster_map
        .clusters
        .iter()
        .map(|c| normalize_topic(&c.topic))
        .collect();
    let gt_topics: BTreeSet<String> = gt
        .cdag
        .cluster_map
        .clusters
        .iter()
        .map(|c| normalize_topic(&c.topic))
        .collect();
    if pred_topics != gt_topics {
        return Err(EvalError::TopicMismatch {
            only_pred: pred_topics.difference(&gt_topics).cloned().collect(),
            only_gt: gt_topics.difference(&pred_topics).cloned().collect(),
        });
    }
    Ok(pred_topics.into_iter().map(|t| (t.clone(), t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EdgeMetrics {
    /// Precision over predicted, recall over truth; empty denominators
    /// score 0 unless `vacuous_one` and everything is empty.
    fn from_counts(tp: usize, pred_total: usize, gt_total: usize, vacuous_one: bool) -> Self {
        if vacuous_one && pred_total == 0 && gt_total == 0 {
            return EdgeMetrics { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let precision = if pred_total == 0 { 0.0 } else { tp as f64 / pred_total as f64 };
        let recall = if gt_total == 0 { 0.0 } else { tp as f64 / gt_total as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EdgeMetrics { precision, recall, f1 }
    }
}

fn topic_edges(cdag: &CDag) -> BTreeSet<(String, String)> {
    cdag.edges
        .iter()
        .map(|&(a, b)| {
            (
                normalize_topic(cdag.cluster_map.topic_of(a)),
                normalize_topic(cdag.cluster_map.topic_of(b)),
            )
        })
        .collect()
}

/// Directed-edge inclusion: TP are ordered topic pairs present in both.
pub fn edge_inclusion_metrics(pred: &CDag, gt: &GroundTruth) -> Result<EdgeMetrics, EvalError> {
    align_nodes(pred, gt)?;
    let pred_edges = topic_edges(pred);
    let gt_edges = topic_edges(&gt.cdag);
    let tp = pred_edges.intersection(&gt_edges).count();
    Ok(EdgeMetrics::from_counts(tp, pred_edges.len(), gt_edges.len(), false))
}

/// Edge absence over all ordered node pairs: TP are pairs absent from
/// both edge sets.
pub fn edge_absence_metrics(pred: &CDag, gt: &GroundTruth) -> Result<EdgeMetrics, EvalError> {
    align_nodes(pred, gt)?;
    let n = pred.cluster_map.len();
    let total_pairs = n * n.saturating_sub(1);
    let pred_edges = topic_edges(pred);
    let gt_edges = topic_edges(&gt.cdag);
    let union = pred_edges.union(&gt_edges).count();
    let tp = total_pairs - union;
    let absent_pred = total_pairs - pred_edges.len();
    let absent_gt = total_pairs - gt_edges.len();
    Ok(EdgeMetrics::from_counts(tp, absent_pred, absent_gt, true))
}

/// One quality-evaluation row: both edge metrics plus the absolute
/// estimated direct effect (near zero means the mediators were found).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub inclusion: EdgeMetrics,
    pub absence: EdgeMetrics,
    pub direct_effect: f64,
    pub pred_edge_count: usize,
}

impl EvaluationReport {
    /// Fixed-width human-readable rendering.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "| edges | inclusion P/R/F1        | absence P/R/F1          | direct effect |\n",
        );
        out.push_str(
            "|-------|-------------------------|-------------------------|---------------|\n",
        );
        out.push_str(&format!(
            "| {:>5} | {:.2} / {:.2} / {:.2}      | {:.2} / {:.2} / {:.2}      | {:>13.4} |\n",
            self.pred_edge_count,
            self.inclusion.precision,
            self.inclusion.recall,
            self.inclusion.f1,
            self.absence.precision,
            self.absence.recall,
            self.absence.f1,
            self.direct_effect,
        ));
        out
    }
}

/// Full evaluation: edge metrics plus the direct-effect score estimated
/// from the predicted C-DAG on the dataset.
pub fn evaluate(
    pred: &CDag,
    gt: &GroundTruth,
    dataset: &Dataset,
    weights: &BTreeMap<String, WeightVector>,
) -> Result<EvaluationReport, EvalError> {
    let inclusion = edge_inclusion_metrics(pred, gt)?;
    let absence = edge_absence_metrics(pred, gt)?;
    let direct = estimate_effect(dataset, weights, pred, EffectKind::Direct)?;
    Ok(EvaluationReport {
        inclusion,
        absence,
        direct_effect: direct.estimate.value.abs(),
        pred_edge_count: pred.edges.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdag::{Cluster, ClusterMap, EdgeProvenance};
    use approx::assert_abs_diff_eq;

    pub(crate) fn cdag_fixture(topics: &[&str], edges: &[(usize, usize)]) -> CDag {
        let clusters: Vec<Cluster> = topics
            .iter()
            .enumerate()
            .map(|(id, t)| Cluster {
                id,
                topic: t.to_string(),
                members: [t.to_string()].into_iter().collect(),
            })
            .collect();
        let mut edge_set = BTreeSet::new();
        let mut provenance = BTreeMap::new();
        for &(a, b) in edges {
            edge_set.insert((a, b));
            provenance.insert(
                (a, b),
                EdgeProvenance {
                    oracle_confidence: 1.0,
                    prune_p: None,
                    survived_reason: "fixture".into(),
                },
            );
        }
        CDag {
            cluster_map: ClusterMap {
                clusters,
                exposure_cluster: 0,
                outcome_cluster: topics.len().saturating_sub(1),
            },
            edges: edge_set,
            provenance,
        }
    }

    fn gt(topics: &[&str], edges: &[(usize, usize)]) -> GroundTruth {
        GroundTruth::new(cdag_fixture(topics, edges), "test").unwrap()
    }

    #[test]
    fn alignment_is_case_insensitive() {
        let pred = cdag_fixture(&["Weather", "deaths"], &[]);
        let truth = gt(&["weather", "Deaths"], &[]);
        assert!(align_nodes(&pred, &truth).is_ok());
    }

    #[test]
    fn alignment_mismatch_names_the_difference() {
        let pred = cdag_fixture(&["weather", "mobility"], &[]);
        let truth = gt(&["weather", "deaths"], &[]);
        let err = align_nodes(&pred, &truth).unwrap_err();
        match err {
            EvalError::TopicMismatch { only_pred, only_gt } => {
                assert_eq!(only_pred, vec!["mobility"]);
                assert_eq!(only_gt, vec!["deaths"]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn inclusion_hand_counted() {
        // pred {A->B, B->C}, gt {A->B, A->C}: TP = 1, p = r = f1 = 0.5.
        let pred = cdag_fixture(&["a", "b", "c"], &[(0, 1), (1, 2)]);
        let truth = gt(&["a", "b", "c"], &[(0, 1), (0, 2)]);
        let m = edge_inclusion_metrics(&pred, &truth).unwrap();
        assert_abs_diff_eq!(m.precision, 0.5);
        assert_abs_diff_eq!(m.recall, 0.5);
        assert_abs_diff_eq!(m.f1, 0.5);
    }

    #[test]
    fn inclusion_identical_graphs() {
        let pred = cdag_fixture(&["a", "b", "c"], &[(0, 1), (1, 2)]);
        let truth = gt(&["a", "b", "c"], &[(0, 1), (1, 2)]);
        let m = edge_inclusion_metrics(&pred, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn inclusion_direction_matters() {
        let pred = cdag_fixture(&["a", "b"], &[(1, 0)]);
        let truth = gt(&["a", "b"], &[(0, 1)]);
        let m = edge_inclusion_metrics(&pred, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn absence_three_node_example() {
        // 3 nodes = 6 ordered pairs; pred {A->B}, gt {A->B}: 5 pairs absent
        // from both, perfect scores.
        let pred = cdag_fixture(&["a", "b", "c"], &[(0, 1)]);
        let truth = gt(&["a", "b", "c"], &[(0, 1)]);
        let m = edge_absence_metrics(&pred, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn absence_complete_digraph_prediction() {
        let pred = cdag_fixture(&["a", "b"], &[(0, 1), (1, 0)]);
        let truth = gt(&["a", "b"], &[]);
        let m = edge_absence_metrics(&pred, &truth).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn absence_both_empty_is_vacuously_perfect() {
        // Single pair of nodes with complete digraphs on both sides: no
        // absent pairs anywhere scores 1 by convention.
        let pred = cdag_fixture(&["a", "b"], &[(0, 1), (1, 0)]);
        let truth_cdag = cdag_fixture(&["a", "b"], &[(0, 1), (1, 0)]);
        // Bypass acyclicity for this metric-only fixture.
        let truth = GroundTruth {
            cdag: truth_cdag,
            source: "test".into(),
        };
        let m = edge_absence_metrics(&pred, &truth).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_prediction_scores() {
        let pred = cdag_fixture(&["a", "b", "c"], &[]);
        let truth = gt(&["a", "b", "c"], &[(0, 1)]);
        let inc = edge_inclusion_metrics(&pred, &truth).unwrap();
        assert_eq!((inc.precision, inc.recall, inc.f1), (0.0, 0.0, 0.0));
        let abs = edge_absence_metrics(&pred, &truth).unwrap();
        assert!(abs.recall < 1.0 || abs.precision < 1.0);
        // absent-pred = 6, absent-gt = 5, both = 5.
        assert_abs_diff_eq!(abs.precision, 5.0 / 6.0);
        assert_abs_diff_eq!(abs.recall, 1.0);
    }

    #[test]
    fn swapping_arguments_exchanges_precision_and_recall() {
        let a = cdag_fixture(&["a", "b", "c"], &[(0, 1), (1, 2), (0, 2)]);
        let b = cdag_fixture(&["a", "b", "c"], &[(0, 1)]);
        let gta = GroundTruth::new(a.clone(), "t").unwrap();
        let gtb = GroundTruth::new(b.clone(), "t").unwrap();
        let ab = edge_inclusion_metrics(&a, &gtb).unwrap();
        let ba = edge_inclusion_metrics(&b, &gta).unwrap();
        assert_abs_diff_eq!(ab.precision, ba.recall);
        assert_abs_diff_eq!(ab.recall, ba.precision);
        let ab = edge_absence_metrics(&a, &gtb).unwrap();
        let ba = edge_absence_metrics(&b, &gta).unwrap();
        assert_abs_diff_eq!(ab.precision, ba.recall);
        assert_abs_diff_eq!(ab.recall, ba.precision);
    }

    #[test]
    fn metrics_stay_in_unit_interval_with_f1_between() {
        let pred = cdag_fixture(&["a", "b", "c", "d"], &[(0, 1), (2, 3), (0, 3)]);
        let truth = gt(&["a", "b", "c", "d"], &[(0, 1), (1, 2)]);
        for m in [
            edge_inclusion_metrics(&pred, &truth).unwrap(),
            edge_absence_metrics(&pred, &truth).unwrap(),
        ] {
            for v in [m.precision, m.recall, m.f1] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
            assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        }
    }

    #[test]
    fn evaluate_composes_metrics_and_effect() {
        use crate::synth::LinearScm;
        use rand::SeedableRng;
        let scm = LinearScm::chain(&["t", "m", "o"], 0.8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(137);
        let ds = scm.simulate_dataset(5000, &mut rng);
        // Prediction with the correct mediation structure; members must
        // name real dataset columns for estimation.
        let pred = {
            let mut c = cdag_fixture(&["t", "m", "o"], &[(0, 1), (1, 2)]);
            c.cluster_map.exposure_cluster = 0;
            c.cluster_map.outcome_cluster = 2;
            c
        };
        let truth = gt(&["t", "m", "o"], &[(0, 1), (1, 2)]);
        let report = evaluate(&pred, &truth, &ds, &BTreeMap::new()).unwrap();
        assert_eq!(report.inclusion.f1, 1.0);
        assert_eq!(report.absence.f1, 1.0);
        assert!(report.direct_effect < 0.05);
        assert_eq!(report.pred_edge_count, 2);
        // Ablated prediction missing the mediator edges: the direct effect
        // is materially overstated.
        let ablated = {
            let mut c = cdag_fixture(&["t", "m", "o"], &[(0, 2)]);
            c.cluster_map.exposure_cluster = 0;
            c.cluster_map.outcome_cluster = 2;
            c
        };
        let report2 = evaluate(&ablated, &truth, &ds, &BTreeMap::new()).unwrap();
        assert!(report2.direct_effect > 0.2, "ablated {}", report2.direct_effect);
        let table = report.render_table();
        assert!(table.contains("direct effect"));
    }
}

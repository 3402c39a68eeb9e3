//! Knowledge extraction: mine candidate attributes for the input rows
//! from a data lake (a directory of CSV tables) and a knowledge-graph
//! triples file.
//!
//! Keys are aligned by normalized exact match: case-folded, trimmed,
//! internal whitespace collapsed. Entity disambiguation beyond that is
//! out of scope; unlinked keys are reported, not guessed.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{infer_dtype, load_raw_csv, Column, Dataset, Dtype, TableError};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("unreadable data lake {path}: {cause}")]
    UnreadableLake { path: PathBuf, cause: String },
    #[error("lake table {path} lost its key column {column}")]
    KeyColumnVanished { path: PathBuf, column: String },
    #[error("malformed triple at line {0}")]
    MalformedTriple(u64),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Case-fold, trim, and collapse internal whitespace.
pub fn normalize_key(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A lake table column that can be joined against the input key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinCandidate {
    pub table_path: PathBuf,
    pub lake_key_column: String,
    /// Fraction of distinct input keys found in the lake column.
    pub containment: f64,
    /// Distinct input keys matched.
    pub matched_rows: usize,
}

/// One subject-predicate-object triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgTriple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

/// Where an extracted attribute came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Lake { table: String, column: String },
    Kg { predicate: String, hop: u8 },
}

/// An extracted column aligned to the input rows. Cells may hold several
/// raw values (many-to-many joins); an empty cell list means missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAttribute {
    pub name: String,
    pub values: Vec<Vec<String>>,
    pub provenance: Provenance,
}

impl CandidateAttribute {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    /// Fraction of input rows carrying at least one value.
    pub fn coverage(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let present = self.values.iter().filter(|v| !v.is_empty()).count();
        present as f64 / self.values.len() as f64
    }

    /// Numeric iff every individual raw value parses as a finite real.
    pub fn dtype(&self) -> Dtype {
        infer_dtype(self.values.iter().flatten().map(|s| Some(s.as_str())))
    }

    pub fn is_multivalued(&self) -> bool {
        self.values.iter().any(|v| v.len() > 1)
    }

    /// Convert to a typed column; requires single-valued cells.
    pub fn to_column(&self) -> Column {
        assert!(!self.is_multivalued(), "aggregate multi-valued cells first");
        let cells: Vec<Option<String>> =
            self.values.iter().map(|v| v.first().cloned()).collect();
        Column::from_cells(self.name.clone(), cells)
    }
}

/// Scan a directory of CSV tables for categorical columns whose values
/// contain the input keys. Candidates meeting `min_containment` are
/// returned sorted by containment descending, then path ascending.
pub fn discover_joinable(
    dataset: &Dataset,
    lake_dir: &Path,
    min_containment: f64,
    missing_marker: &str,
) -> Result<Vec<JoinCandidate>, ExtractError> {
    let entries = fs::read_dir(lake_dir).map_err(|e| ExtractError::UnreadableLake {
        path: lake_dir.to_path_buf(),
        cause: e.to_string(),
    })?;
    let mut tables: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| ExtractError::UnreadableLake {
            path: lake_dir.to_path_buf(),
            cause: e.to_string(),
        })?;
        let path = entry.path();
        if path.extension().map(|e| e == "csv").unwrap_or(false) {
            tables.push(path);
        }
    }
    tables.sort();

    let input_keys: BTreeSet<String> = dataset
        .key_values()
        .iter()
        .map(|k| normalize_key(k))
        .collect();
    let total = input_keys.len();
    let mut candidates = Vec::new();
    for path in tables {
        let table = match load_raw_csv(&path, missing_marker) {
            Ok(t) => t,
            // An empty table has no keys to offer; skip it.
            Err(TableError::EmptyTable) => continue,
            Err(e) => return Err(e.into()),
        };
        for (idx, header) in table.headers.iter().enumerate() {
            if table.column_dtype(idx) != Dtype::Categorical {
                continue;
            }
            let lake_values: BTreeSet<String> = table
                .column_cells(idx)
                .iter()
                .flatten()
                .map(|v| normalize_key(v))
                .collect();
            let matched = input_keys.intersection(&lake_values).count();
            let containment = if total == 0 {
                0.0
            } else {
                matched as f64 / total as f64
            };
            if containment >= min_containment && containment > 0.0 {
                candidates.push(JoinCandidate {
                    table_path: path.clone(),
                    lake_key_column: header.clone(),
                    containment,
                    matched_rows: matched,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.containment
            .partial_cmp(&a.containment)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.table_path.cmp(&b.table_path))
            .then_with(|| a.lake_key_column.cmp(&b.lake_key_column))
    });
    Ok(candidates)
}

/// Left-join the input keys against one lake table; every non-key lake
/// column becomes a candidate attribute. Duplicate lake keys produce
/// multi-valued cells for downstream aggregation.
pub fn extract_from_table(
    dataset: &Dataset,
    candidate: &JoinCandidate,
    missing_marker: &str,
) -> Result<Vec<CandidateAttribute>, ExtractError> {
    let table = load_raw_csv(&candidate.table_path, missing_marker)?;
    let key_idx =
        table
            .column_index(&candidate.lake_key_column)
            .ok_or_else(|| ExtractError::KeyColumnVanished {
                path: candidate.table_path.clone(),
                column: candidate.lake_key_column.clone(),
            })?;
    let mut by_key: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (row, cells) in table.rows.iter().enumerate() {
        if let Some(k) = &cells[key_idx] {
            by_key.entry(normalize_key(k)).or_default().push(row);
        }
    }
    let stem = candidate
        .table_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "table".to_string());
    let input_keys = dataset.key_values();
    let mut out = Vec::new();
    for (col_idx, header) in table.headers.iter().enumerate() {
        if col_idx == key_idx {
            continue;
        }
        let values: Vec<Vec<String>> = input_keys
            .iter()
            .map(|k| match by_key.get(&normalize_key(k)) {
                Some(rows) => rows
                    .iter()
                    .filter_map(|&r| table.rows[r][col_idx].clone())
                    .collect(),
                None => Vec::new(),
            })
            .collect();
        out.push(CandidateAttribute {
            name: format!("lake:{stem}/{header}"),
            values,
            provenance: Provenance::Lake {
                table: stem.clone(),
                column: header.clone(),
            },
        });
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

/// An in-memory triples index: subjects, their outgoing triples, and the
/// label predicate lookup.
#[derive(Debug, Clone)]
pub struct KgIndex {
    triples: Vec<KgTriple>,
    /// Normalized subject -> triple indices.
    by_subject: BTreeMap<String, Vec<usize>>,
    /// Normalized subject -> original subject spellings.
    subject_names: BTreeMap<String, BTreeSet<String>>,
    /// Normalized label object -> subjects carrying that label.
    labels: BTreeMap<String, BTreeSet<String>>,
    pub label_predicate: String,
}

impl KgIndex {
    /// Load a three-column TSV (subject, predicate, object), one triple
    /// per line.
    pub fn load(path: &Path, label_predicate: &str) -> Result<Self, ExtractError> {
        let text = fs::read_to_string(path)?;
        let mut triples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 || fields.iter().any(|f| f.trim().is_empty()) {
                return Err(ExtractError::MalformedTriple(i as u64 + 1));
            }
            triples.push(KgTriple {
                subject: fields[0].trim().to_string(),
                predicate: fields[1].trim().to_string(),
                object: fields[2].trim().to_string(),
            });
        }
        let mut by_subject: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut subject_names: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        let mut labels: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, t) in triples.iter().enumerate() {
            let norm = normalize_key(&t.subject);
            by_subject.entry(norm.clone()).or_default().push(i);
            subject_names.entry(norm).or_default().insert(t.subject.clone());
            if t.predicate == label_predicate {
                labels
                    .entry(normalize_key(&t.object))
                    .or_default()
                    .insert(t.subject.clone());
            }
        }
        Ok(KgIndex {
            triples,
            by_subject,
            subject_names,
            labels,
            label_predicate: label_predicate.to_string(),
        })
    }

    pub fn n_triples(&self) -> usize {
        self.triples.len()
    }

    fn outgoing(&self, entity: &str) -> Vec<&KgTriple> {
        self.by_subject
            .get(&normalize_key(entity))
            .map(|idxs| idxs.iter().map(|&i| &self.triples[i]).collect())
            .unwrap_or_default()
    }

    fn is_entity(&self, value: &str) -> bool {
        self.by_subject.contains_key(&normalize_key(value))
    }
}

/// Link input key values to KG entities by normalized exact match against
/// triple subjects, then against objects of the label predicate. Unlinked
/// keys are omitted; ambiguity resolves to the lexicographically smallest
/// subject.
pub fn link_entities(dataset: &Dataset, kg: &KgIndex) -> BTreeMap<String, String> {
    let mut links = BTreeMap::new();
    for key in dataset.key_values() {
        let norm = normalize_key(&key);
        let entity = kg
            .subject_names
            .get(&norm)
            .and_then(|names| names.iter().next().cloned())
            .or_else(|| {
                kg.labels
                    .get(&norm)
                    .and_then(|subjects| subjects.iter().next().cloned())
            });
        if let Some(e) = entity {
            links.insert(key, e);
        }
    }
    links
}

/// Extract one candidate per predicate reachable from the linked
/// entities. With `hops = 2`, objects that are themselves entities are
/// followed one more step, namespaced `kg:p1/p2`.
pub fn extract_kg_properties(
    dataset: &Dataset,
    links: &BTreeMap<String, String>,
    kg: &KgIndex,
    hops: u8,
) -> Vec<CandidateAttribute> {
    assert!(hops == 1 || hops == 2, "hops must be 1 or 2");
    let input_keys = dataset.key_values();
    let n = input_keys.len();
    // name -> (provenance, per-row values)
    let mut acc: BTreeMap<String, (Provenance, Vec<Vec<String>>)> = BTreeMap::new();
    let mut push = |name: String, provenance: Provenance, row: usize, value: String| {
        let entry = acc
            .entry(name)
            .or_insert_with(|| (provenance, vec![Vec::new(); n]));
        entry.1[row].push(value);
    };
    for (row, key) in input_keys.iter().enumerate() {
        let Some(entity) = links.get(key) else { continue };
        for t in kg.outgoing(entity) {
            push(
                format!("kg:{}", t.predicate),
                Provenance::Kg {
                    predicate: t.predicate.clone(),
                    hop: 1,
                },
                row,
                t.object.clone(),
            );
            if hops == 2 && kg.is_entity(&t.object) {
                for t2 in kg.outgoing(&t.object) {
                    let predicate = format!("{}/{}", t.predicate, t2.predicate);
                    push(
                        format!("kg:{predicate}"),
                        Provenance::Kg { predicate, hop: 2 },
                        row,
                        t2.object.clone(),
                    );
                }
            }
        }
    }
    acc.into_iter()
        .map(|(name, (provenance, values))| CandidateAttribute {
            name,
            values,
            provenance,
        })
        .collect()
}

/// Summary of one extraction run, serialized as the extraction report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub candidates: Vec<CandidateSummary>,
    pub unlinked_keys: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub name: String,
    pub provenance: Provenance,
    pub coverage: f64,
    pub multivalued: bool,
}

impl ExtractionReport {
    pub fn new(
        dataset: &Dataset,
        candidates: &[CandidateAttribute],
        links: &BTreeMap<String, String>,
    ) -> Self {
        let unlinked_keys = dataset
            .key_values()
            .into_iter()
            .filter(|k| !links.contains_key(k))
            .collect();
        ExtractionReport {
            candidates: candidates
                .iter()
                .map(|c| CandidateSummary {
                    name: c.name.clone(),
                    provenance: c.provenance.clone(),
                    coverage: c.coverage(),
                    multivalued: c.is_multivalued(),
                })
                .collect(),
            unlinked_keys,
        }
    }
}

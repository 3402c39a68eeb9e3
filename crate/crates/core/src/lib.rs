//! Causal data integration core: mine candidate confounders from data
//! lakes and knowledge graphs, clean and merge them into an augmented
//! dataset, build a clustered causal DAG with a hybrid oracle/data
//! pipeline, identify adjustment sets, and estimate causal effects.

pub mod cdag;
pub mod discovery;
pub mod evaluation;
pub mod extract;
pub mod graph;
pub mod inference;
pub mod oracle;
pub mod organize;
pub mod stats;
pub mod synth;
pub mod table;

//! Conditional-independence testing and data-centric structure learning:
//! Fisher-z and G tests, the PC algorithm with Meek orientation rules, and
//! a greedy BIC hill-climbing search over DAGs.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{Dag, Pdag};
use crate::stats;
use crate::table::{encode, Dataset, Dtype, EncodedMatrix, TableError};

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("too few samples for x={x}, y={y} given |S|={s}: n={n}")]
    TooFewSamples { x: String, y: String, s: usize, n: usize },
    #[error("column {0} is not categorical")]
    NotCategorical(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Stats(#[from] stats::StatsError),
}

/// Outcome of one conditional-independence test.
#[derive(Debug, Clone)]
pub struct CIResult {
    pub x: String,
    pub y: String,
    pub conditioning: Vec<String>,
    pub statistic: f64,
    pub p_value: f64,
    pub independent: bool,
    /// Degeneracy flag (singular correlation, skipped strata, ..).
    pub note: Option<String>,
}

/// Fisher-z partial-correlation test on encoded data. Weights, when
/// given, are aligned to the dataset rows behind `data.kept_rows`.
pub fn fisher_z(
    x: &str,
    y: &str,
    conditioning: &[String],
    data: &EncodedMatrix,
    weights: Option<&[f64]>,
    alpha: f64,
) -> Result<CIResult, DiscoveryError> {
    let ix = data
        .column_index(x)
        .ok_or_else(|| TableError::MissingColumn(x.to_string()))?;
    let iy = data
        .column_index(y)
        .ok_or_else(|| TableError::MissingColumn(y.to_string()))?;
    let mut idx = vec![ix, iy];
    for c in conditioning {
        idx.push(
            data.column_index(c)
                .ok_or_else(|| TableError::MissingColumn(c.to_string()))?,
        );
    }
    let n = data.n_rows();
    let s = conditioning.len();
    if n <= s + 3 {
        return Err(DiscoveryError::TooFewSamples {
            x: x.to_string(),
            y: y.to_string(),
            s,
            n,
        });
    }
    let cols: Vec<Vec<f64>> = idx.iter().map(|&i| data.column(i)).collect();
    let col_refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let row_weights: Option<Vec<f64>> =
        weights.map(|w| data.kept_rows.iter().map(|&r| w[r]).collect());
    let corr = stats::correlation_matrix(&col_refs, row_weights.as_deref());
    let mut note = None;
    let r = match stats::partial_correlation(&corr) {
        Ok(r) => r,
        Err(_) => {
            // Collinear conditioning set: conservatively treat as dependent.
            note = Some("singular-correlation".to_string());
            return Ok(CIResult {
                x: x.to_string(),
                y: y.to_string(),
                conditioning: conditioning.to_vec(),
                statistic: f64::INFINITY,
                p_value: 0.0,
                independent: false,
                note,
            });
        }
    };
    let r = r.clamp(-(1.0 - 1e-15), 1.0 - 1e-15);
    let z = 0.5 * ((1.0 + r) / (1.0 - r)).ln();
    let statistic = ((n - s) as f64 - 3.0).sqrt() * z.abs();
    let p_value = stats::normal_two_sided_p(statistic);
    Ok(CIResult {
        x: x.to_string(),
        y: y.to_string(),
        conditioning: conditioning.to_vec(),
        statistic,
        p_value,
        independent: p_value > alpha,
        note,
    })
}

/// Stratified G-test of independence for categorical columns.
pub fn g_test(
    x: &str,
    y: &str,
    conditioning: &[String],
    data: &Dataset,
    alpha: f64,
) -> Result<CIResult, DiscoveryError> {
    for name in [x, y] {
        let col = data
            .column(name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))?;
        if col.dtype() != Dtype::Categorical {
            return Err(DiscoveryError::NotCategorical(name.to_string()));
        }
    }
    let cx = data.column(x).expect("checked");
    let cy = data.column(y).expect("checked");
    let cs: Vec<_> = conditioning
        .iter()
        .map(|c| {
            data.column(c)
                .ok_or_else(|| TableError::MissingColumn(c.to_string()))
        })
        .collect::<Result<_, _>>()?;

    // Complete-case rows over x, y, and the conditioning columns, grouped
    // by the conditioning value combination.
    let mut strata: BTreeMap<Vec<String>, Vec<(String, String)>> = BTreeMap::new();
    let mut n_used = 0usize;
    for row in 0..data.n_rows() {
        let (Some(vx), Some(vy)) = (cx.cell_str(row), cy.cell_str(row)) else {
            continue;
        };
        let key: Option<Vec<String>> = cs.iter().map(|c| c.cell_str(row)).collect();
        let Some(key) = key else { continue };
        strata.entry(key).or_default().push((vx, vy));
        n_used += 1;
    }
    if n_used == 0 {
        return Err(DiscoveryError::TooFewSamples {
            x: x.to_string(),
            y: y.to_string(),
            s: conditioning.len(),
            n: 0,
        });
    }
    let mut g_stat = 0.0;
    let mut dof = 0usize;
    let mut skipped = 0usize;
    for rows in strata.values() {
        let mut xl: Vec<&str> = Vec::new();
        let mut yl: Vec<&str> = Vec::new();
        for (vx, vy) in rows {
            if !xl.contains(&vx.as_str()) {
                xl.push(vx);
            }
            if !yl.contains(&vy.as_str()) {
                yl.push(vy);
            }
        }
        if xl.len() < 2 || yl.len() < 2 {
            // Degenerate stratum: nothing to test, reduce the dof.
            skipped += 1;
            continue;
        }
        let mut table = vec![vec![0.0f64; yl.len()]; xl.len()];
        for (vx, vy) in rows {
            let i = xl.iter().position(|l| l == vx).expect("collected");
            let j = yl.iter().position(|l| l == vy).expect("collected");
            table[i][j] += 1.0;
        }
        let total = rows.len() as f64;
        let row_sum: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let mut col_sum = vec![0.0f64; yl.len()];
        for r in &table {
            for (j, v) in r.iter().enumerate() {
                col_sum[j] += v;
            }
        }
        for i in 0..xl.len() {
            for j in 0..yl.len() {
                let observed = table[i][j];
                if observed > 0.0 {
                    let expected = row_sum[i] * col_sum[j] / total;
                    g_stat += 2.0 * observed * (observed / expected).ln();
                }
            }
        }
        dof += (xl.len() - 1) * (yl.len() - 1);
    }
    let note = (skipped > 0).then(|| format!("skipped {skipped} degenerate strata"));
    let p_value = if dof == 0 {
        1.0
    } else {
        stats::chi2_sf(g_stat, dof as f64)
    };
    Ok(CIResult {
        x: x.to_string(),
        y: y.to_string(),
        conditioning: conditioning.to_vec(),
        statistic: g_stat,
        p_value,
        independent: p_value > alpha,
        note,
    })
}

/// Dispatch: all-categorical selections use the G-test, anything else is
/// encoded and handed to Fisher-z.
pub fn ci_test(
    x: &str,
    y: &str,
    conditioning: &[String],
    data: &Dataset,
    alpha: f64,
    weights: Option<&[f64]>,
) -> Result<CIResult, DiscoveryError> {
    let mut names = vec![x.to_string(), y.to_string()];
    names.extend(conditioning.iter().cloned());
    let all_categorical = names.iter().all(|n| {
        data.column(n)
            .map(|c| c.dtype() == Dtype::Categorical)
            .unwrap_or(false)
    });
    let any_missing_column = names.iter().any(|n| data.column(n).is_none());
    if all_categorical && !any_missing_column {
        g_test(x, y, conditioning, data, alpha)
    } else {
        let enc = encode(data, &names)?;
        fisher_z(x, y, conditioning, &enc, weights, alpha)
    }
}

/// Separating sets recorded while removing skeleton edges, keyed by the
/// unordered node-index pair.
pub type SepsetMap = BTreeMap<(usize, usize), Vec<usize>>;

/// PC output: the oriented pattern plus the bookkeeping needed to audit it.
#[derive(Debug, Clone)]
pub struct PcResult {
    pub graph: Pdag,
    pub sepsets: SepsetMap,
    pub tests_run: usize,
    /// Human-readable records of tests that errored (edges were retained).
    pub test_failures: Vec<String>,
}

/// PC driven by an arbitrary independence oracle. The oracle receives
/// node indices and a sorted conditioning set and answers "independent?".
///
/// The skeleton phase is level-synchronous (PC-stable): adjacency is
/// frozen per level, so results do not depend on scan order.
pub fn pc_from_oracle<F>(
    names: Vec<String>,
    max_cond: usize,
    mut oracle: F,
) -> (PcResult, Vec<String>)
where
    F: FnMut(usize, usize, &[usize]) -> Result<bool, DiscoveryError>,
{
    let n = names.len();
    let mut graph = Pdag::complete(names);
    let mut sepsets = SepsetMap::new();
    let mut tests_run = 0usize;
    let mut failures = Vec::new();

    for level in 0..=max_cond {
        let adj: Vec<BTreeSet<usize>> = (0..n).map(|v| graph.neighbors(v)).collect();
        let mut removals: Vec<((usize, usize), Vec<usize>)> = Vec::new();
        let edges: Vec<(usize, usize)> = graph.undirected_edges().iter().copied().collect();
        for (x, y) in edges {
            let mut found = None;
            'sides: for (a, b) in [(x, y), (y, x)] {
                let mut pool: Vec<usize> = adj[a].iter().copied().filter(|&v| v != b).collect();
                pool.sort_unstable();
                if pool.len() < level {
                    continue;
                }
                for subset in combinations(&pool, level) {
                    tests_run += 1;
                    match oracle(x, y, &subset) {
                        Ok(true) => {
                            found = Some(subset);
                            break 'sides;
                        }
                        Ok(false) => {}
                        Err(e) => {
                            // Conservative: never delete an edge on a failed test.
                            failures.push(format!("{x}-{y} | {subset:?}: {e}"));
                        }
                    }
                }
            }
            if let Some(sep) = found {
                removals.push(((x, y), sep));
            }
        }
        if removals.is_empty() && level > 0 {
            let max_pool = (0..n)
                .map(|v| graph.neighbors(v).len().saturating_sub(1))
                .max()
                .unwrap_or(0);
            if max_pool <= level {
                break;
            }
        }
        for ((x, y), sep) in removals {
            graph.remove_undirected(x, y);
            sepsets.insert((x.min(y), x.max(y)), sep);
        }
    }

    orient_colliders(&mut graph, &sepsets);
    apply_meek_rules(&mut graph);
    (
        PcResult {
            graph,
            sepsets,
            tests_run,
            test_failures: failures.clone(),
        },
        failures,
    )
}

/// Classic PC on a dataset: skeleton by CI testing, collider orientation
/// from separating sets, then Meek rules 1-4.
pub fn pc(
    dataset: &Dataset,
    variables: &[String],
    alpha: f64,
    max_cond: usize,
    weights: Option<&[f64]>,
) -> Result<PcResult, DiscoveryError> {
    for v in variables {
        if dataset.column(v).is_none() {
            return Err(TableError::MissingColumn(v.clone()).into());
        }
    }
    let names = variables.to_vec();
    let (result, _) = pc_from_oracle(names.clone(), max_cond, |x, y, s| {
        let cond: Vec<String> = s.iter().map(|&i| names[i].clone()).collect();
        ci_test(&names[x], &names[y], &cond, dataset, alpha, weights).map(|r| r.independent)
    });
    Ok(result)
}

/// Orient unshielded triples x - z - y as colliders x -> z <- y whenever z
/// is absent from the recorded separating set of (x, y).
fn orient_colliders(graph: &mut Pdag, sepsets: &SepsetMap) {
    let n = graph.n();
    for x in 0..n {
        for y in (x + 1)..n {
            if graph.is_adjacent(x, y) {
                continue;
            }
            let common: Vec<usize> = graph
                .neighbors(x)
                .intersection(&graph.neighbors(y))
                .copied()
                .collect();
            for z in common {
                let sep = sepsets.get(&(x, y));
                let z_separates = sep.map(|s| s.contains(&z)).unwrap_or(true);
                if !z_separates {
                    // Orientation only replaces undirected edges, so a
                    // conflicting earlier collider wins deterministically.
                    graph.orient(x, z);
                    graph.orient(y, z);
                }
            }
        }
    }
}

/// Meek rules 1-4, applied to a fixed point.
fn apply_meek_rules(graph: &mut Pdag) {
    loop {
        let mut changed = false;
        let undirected: Vec<(usize, usize)> = graph.undirected_edges().iter().copied().collect();
        for (a, b) in undirected {
            for (from, to) in [(a, b), (b, a)] {
                if !graph.has_undirected(from, to) {
                    break;
                }
                if meek_rule_applies(graph, from, to) {
                    graph.orient(from, to);
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

/// Would orienting `a -> b` be forced by one of Meek's rules?
fn meek_rule_applies(g: &Pdag, a: usize, b: usize) -> bool {
    let n = g.n();
    // R1: c -> a, a - b, c and b nonadjacent => a -> b.
    for c in 0..n {
        if g.has_directed(c, a) && !g.is_adjacent(c, b) && c != b {
            return true;
        }
    }
    // R2: a -> c -> b and a - b => a -> b.
    for c in 0..n {
        if g.has_directed(a, c) && g.has_directed(c, b) {
            return true;
        }
    }
    // R3: a - c -> b and a - d -> b with c, d nonadjacent => a -> b.
    let candidates: Vec<usize> = (0..n)
        .filter(|&c| g.has_undirected(a, c) && g.has_directed(c, b))
        .collect();
    for (i, &c) in candidates.iter().enumerate() {
        for &d in &candidates[i + 1..] {
            if !g.is_adjacent(c, d) {
                return true;
            }
        }
    }
    // R4: d -> c -> b with a adjacent to both c and d, and b, d
    // nonadjacent => a -> b.
    for d in 0..n {
        if d == a || d == b || !g.is_adjacent(a, d) || g.is_adjacent(b, d) {
            continue;
        }
        for c in 0..n {
            if c == a || c == b || c == d {
                continue;
            }
            if g.has_directed(d, c) && g.has_directed(c, b) && g.is_adjacent(a, c) {
                return true;
            }
        }
    }
    false
}

/// The completed partially directed acyclic graph (Markov equivalence
/// class pattern) of a DAG: skeleton, v-structures, Meek closure.
pub fn cpdag_of(dag: &Dag) -> Pdag {
    let n = dag.n();
    let mut undirected: BTreeSet<(usize, usize)> = dag
        .edges()
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    let mut directed: BTreeSet<(usize, usize)> = BTreeSet::new();
    // v-structures: x -> z <- y with x, y nonadjacent.
    for z in 0..n {
        let parents = dag.parents(z);
        for (i, &x) in parents.iter().enumerate() {
            for &y in &parents[i + 1..] {
                if !dag.has_edge(x, y) && !dag.has_edge(y, x) {
                    directed.insert((x, z));
                    directed.insert((y, z));
                    undirected.remove(&(x.min(z), x.max(z)));
                    undirected.remove(&(y.min(z), y.max(z)));
                }
            }
        }
    }
    let mut pdag =
        Pdag::new(dag.nodes().to_vec(), directed, undirected).expect("pattern of a DAG is valid");
    apply_meek_rules(&mut pdag);
    pdag
}

const SCORE_EPS: f64 = 1e-9;

/// Decomposable linear-Gaussian BIC of a DAG on the encoded data:
/// sum over nodes of loglik(node | parents) - (params/2) ln n.
pub fn bic_score(dag: &Dag, dataset: &Dataset) -> Result<f64, DiscoveryError> {
    let names: Vec<String> = dag.nodes().to_vec();
    let enc = encode(dataset, &names)?;
    let mut total = 0.0;
    for v in 0..dag.n() {
        let parents = dag.parents(v);
        total += local_bic(&enc, v, &parents)?;
    }
    Ok(total)
}

fn local_bic(enc: &EncodedMatrix, v: usize, parents: &[usize]) -> Result<f64, DiscoveryError> {
    let n = enc.n_rows();
    let y = DVector::from_vec(enc.column(v));
    let p = parents.len() + 1;
    let mut x = DMatrix::from_element(n, p, 1.0);
    for (j, &par) in parents.iter().enumerate() {
        x.set_column(j + 1, &DVector::from_vec(enc.column(par)));
    }
    let fit = stats::wls(&x, &y, None)?;
    let mut rss = 0.0;
    for i in 0..n {
        let fitted: f64 = (0..p).map(|a| x[(i, a)] * fit.coefs[a]).sum();
        let r = y[i] - fitted;
        rss += r * r;
    }
    let sigma2 = (rss / n as f64).max(1e-12);
    let loglik = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    let params = (parents.len() + 2) as f64;
    Ok(loglik - 0.5 * params * (n as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

/// Greedy hill climbing over single-edge additions, deletions, and
/// reversals, maximizing total BIC. Deterministic: moves are scanned in a
/// fixed lexicographic order and the first best-scoring move wins.
pub fn greedy_bic_search(
    dataset: &Dataset,
    variables: &[String],
    max_parents: usize,
) -> Result<Dag, DiscoveryError> {
    let enc = encode(dataset, variables)?;
    let k = variables.len();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut cache: BTreeMap<(usize, Vec<usize>), f64> = BTreeMap::new();
    let mut local = |v: usize, parents: Vec<usize>, enc: &EncodedMatrix| -> Result<f64, DiscoveryError> {
        if let Some(&s) = cache.get(&(v, parents.clone())) {
            return Ok(s);
        }
        let s = local_bic(enc, v, &parents)?;
        cache.insert((v, parents), s);
        Ok(s)
    };
    let parents_of = |edges: &BTreeSet<(usize, usize)>, v: usize| -> Vec<usize> {
        edges.iter().filter(|&&(_, b)| b == v).map(|&(a, _)| a).collect()
    };
    let creates_cycle = |edges: &BTreeSet<(usize, usize)>, from: usize, to: usize| -> bool {
        // Path to -> .. -> from would close a cycle.
        let mut seen = BTreeSet::new();
        let mut stack = vec![to];
        while let Some(u) = stack.pop() {
            if u == from {
                return true;
            }
            for &(a, b) in edges.iter() {
                if a == u && seen.insert(b) {
                    stack.push(b);
                }
            }
        }
        false
    };

    loop {
        let mut best: Option<(f64, Move)> = None;
        let mut moves: Vec<Move> = Vec::new();
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    continue;
                }
                if edges.contains(&(a, b)) {
                    moves.push(Move::Delete(a, b));
                    moves.push(Move::Reverse(a, b));
                } else if !edges.contains(&(b, a)) {
                    moves.push(Move::Add(a, b));
                }
            }
        }
        moves.sort();
        for mv in moves {
            let delta = match mv {
                Move::Add(a, b) => {
                    let pb = parents_of(&edges, b);
                    if pb.len() >= max_parents || creates_cycle(&edges, a, b) {
                        continue;
                    }
                    let mut pb_new = pb.clone();
                    pb_new.push(a);
                    pb_new.sort_unstable();
                    local(b, pb_new, &enc)? - local(b, pb, &enc)?
                }
                Move::Delete(a, b) => {
                    let pb = parents_of(&edges, b);
                    let pb_new: Vec<usize> = pb.iter().copied().filter(|&p| p != a).collect();
                    local(b, pb_new, &enc)? - local(b, pb, &enc)?
                }
                Move::Reverse(a, b) => {
                    let mut trial = edges.clone();
                    trial.remove(&(a, b));
                    if creates_cycle(&trial, b, a) {
                        continue;
                    }
                    let pa = parents_of(&edges, a);
                    if pa.len() >= max_parents {
                        continue;
                    }
                    let pb = parents_of(&edges, b);
                    let pb_new: Vec<usize> = pb.iter().copied().filter(|&p| p != a).collect();
                    let mut pa_new = pa.clone();
                    pa_new.push(b);
                    pa_new.sort_unstable();
                    local(b, pb_new, &enc)? - local(b, pb, &enc)? + local(a, pa_new, &enc)?
                        - local(a, pa, &enc)?
                }
            };
            let better = match best {
                None => delta > SCORE_EPS,
                Some((best_delta, _)) => delta > best_delta + SCORE_EPS,
            };
            if better {
                best = Some((delta, mv));
            }
        }
        match best {
            None => break,
            Some((_, mv)) => match mv {
                Move::Add(a, b) => {
                    edges.insert((a, b));
                }
                Move::Delete(a, b) => {
                    edges.remove(&(a, b));
                }
                Move::Reverse(a, b) => {
                    edges.remove(&(a, b));
                    edges.insert((b, a));
                }
            },
        }
    }
    Ok(Dag::new(variables.to_vec(), edges).expect("moves preserve acyclicity"))
}

/// Generate all size-`k` subsets of the (sorted) pool, in lexicographic
/// order.
pub(crate) fn combinations(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if pool.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| pool[i]).collect());
        // Advance the combination indices.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + pool.len() - k {
                idx[i] += 1;
                for j in (i + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

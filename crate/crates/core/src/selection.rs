//! Quality measures used as selection criteria, and how well they predict
//! downstream performance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compress::CompressedEmbedding;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::measures::{
    default_lambda, overlap_from_bases, pip_loss, projected_reconstruction_error,
    reconstruction_error, spectral_deltas, LeftBasis, QualityReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureName {
    EigenspaceOverlap,
    PipLoss,
    ReconstructionError,
    ProjectedReconstructionError,
    Delta,
    DeltaMax,
    Delta1,
    Delta2,
}

impl MeasureName {
    pub const ALL: [MeasureName; 8] = [
        MeasureName::EigenspaceOverlap,
        MeasureName::PipLoss,
        MeasureName::ReconstructionError,
        MeasureName::ProjectedReconstructionError,
        MeasureName::Delta,
        MeasureName::DeltaMax,
        MeasureName::Delta1,
        MeasureName::Delta2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MeasureName::EigenspaceOverlap => "eigenspace_overlap",
            MeasureName::PipLoss => "pip_loss",
            MeasureName::ReconstructionError => "reconstruction_error",
            MeasureName::ProjectedReconstructionError => "projected_reconstruction_error",
            MeasureName::Delta => "delta",
            MeasureName::DeltaMax => "delta_max",
            MeasureName::Delta1 => "delta1",
            MeasureName::Delta2 => "delta2",
        }
    }

    pub fn default_orientation(self) -> Orientation {
        match self {
            MeasureName::EigenspaceOverlap => Orientation::HigherBetter,
            _ => Orientation::LowerBetter,
        }
    }

    /// The measure's value in a report; `None` when it does not apply.
    pub fn value(self, r: &QualityReport) -> Option<f64> {
        match self {
            MeasureName::EigenspaceOverlap => Some(r.eigenspace_overlap),
            MeasureName::PipLoss => Some(r.pip_loss),
            MeasureName::ReconstructionError => r.reconstruction_error,
            MeasureName::ProjectedReconstructionError => Some(r.projected_reconstruction_error),
            MeasureName::Delta => Some(r.delta),
            MeasureName::DeltaMax => Some(r.delta_max),
            MeasureName::Delta1 => Some(r.delta1),
            MeasureName::Delta2 => Some(r.delta2),
        }
    }
}

impl fmt::Display for MeasureName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasureName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = MeasureName::ALL.iter().map(|m| m.as_str()).collect();
                Error::InvalidArgument(format!(
                    "unknown measure {s:?}; expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    /// True when `a` is strictly preferred over `b`.
    pub fn prefers(self, a: f64, b: f64) -> bool {
        match self {
            Orientation::HigherBetter => a > b,
            Orientation::LowerBetter => a < b,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Orientation::HigherBetter => Orientation::LowerBetter,
            Orientation::LowerBetter => Orientation::HigherBetter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub name: MeasureName,
    pub orientation: Orientation,
}

impl MeasureSpec {
    pub fn new(name: MeasureName) -> Self {
        Self {
            name,
            orientation: name.default_orientation(),
        }
    }
}

impl From<MeasureName> for MeasureSpec {
    fn from(name: MeasureName) -> Self {
        Self::new(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub index: usize,
    /// Measure value per candidate; `None` for excluded candidates.
    pub scores: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

/// Index of the best score under `orientation`; ties keep the lowest index.
pub fn argbest(scores: &[Option<f64>], orientation: Orientation) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(v) = *s {
            match best {
                Some((_, b)) if !orientation.prefers(v, b) => {}
                _ => best = Some((i, v)),
            }
        }
    }
    best.map(|(i, _)| i)
}

fn candidate_score(
    x: &DenseMatrix,
    base: &LeftBasis,
    xt: &DenseMatrix,
    name: MeasureName,
) -> Result<f64> {
    match name {
        MeasureName::EigenspaceOverlap => overlap_from_bases(base, &LeftBasis::of(xt)?),
        MeasureName::PipLoss => pip_loss(x, xt),
        MeasureName::ReconstructionError => reconstruction_error(x, xt),
        MeasureName::ProjectedReconstructionError => projected_reconstruction_error(x, xt),
        MeasureName::Delta | MeasureName::DeltaMax | MeasureName::Delta1 | MeasureName::Delta2 => {
            let d = spectral_deltas(x, xt, default_lambda(x)?)?;
            Ok(match name {
                MeasureName::Delta => d.delta,
                MeasureName::DeltaMax => d.delta_max,
                MeasureName::Delta1 => d.delta1,
                _ => d.delta2,
            })
        }
    }
}

/// Picks the candidate the measure rates best. Candidates the measure cannot
/// score are skipped with a warning.
pub fn select_best(
    base: &EmbeddingMatrix,
    candidates: &[CompressedEmbedding],
    measure: &MeasureSpec,
) -> Result<Selection> {
    select_scored(
        base.matrix(),
        candidates.iter().map(|c| c.decompress()),
        measure,
    )
}

/// [`select_best`] over already materialized candidates.
pub fn select_best_matrices(
    base: &DenseMatrix,
    candidates: &[DenseMatrix],
    measure: &MeasureSpec,
) -> Result<Selection> {
    select_scored(base, candidates.iter().map(|c| Ok(c.clone())), measure)
}

fn select_scored(
    x: &DenseMatrix,
    candidates: impl ExactSizeIterator<Item = Result<DenseMatrix>>,
    measure: &MeasureSpec,
) -> Result<Selection> {
    if candidates.len() == 0 {
        return Err(Error::InvalidArgument(
            "select_best needs at least one candidate".into(),
        ));
    }
    let basis = LeftBasis::of(x)?;
    let mut scores = Vec::with_capacity(candidates.len());
    let mut warnings = Vec::new();
    for (i, xt) in candidates.enumerate() {
        match xt.and_then(|xt| candidate_score(x, &basis, &xt, measure.name)) {
            Ok(v) => scores.push(Some(v)),
            Err(e) => {
                warnings.push(format!("candidate {i} excluded: {e}"));
                scores.push(None);
            }
        }
    }
    let index = argbest(&scores, measure.orientation).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "measure {} could not score any candidate",
            measure.name
        ))
    })?;
    Ok(Selection {
        index,
        scores,
        warnings,
    })
}

fn check_aligned(scores: &[f64], perf: &[f64]) -> Result<()> {
    if scores.len() != perf.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} performance values",
            scores.len(),
            perf.len()
        )));
    }
    if scores.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 candidates".into()));
    }
    Ok(())
}

/// Decisive pairs: distinct scores and distinct performances. Yields
/// `(preferred, other)` by the measure.
fn decisive_pairs<'a>(
    scores: &'a [f64],
    perf: &'a [f64],
    orientation: Orientation,
) -> impl Iterator<Item = (usize, usize)> + 'a {
    let n = scores.len();
    (0..n)
        .flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
        .filter(move |&(i, j)| scores[i] != scores[j] && perf[i] != perf[j])
        .map(move |(i, j)| {
            if orientation.prefers(scores[i], scores[j]) {
                (i, j)
            } else {
                (j, i)
            }
        })
}

/// Fraction of decisive pairs where the measure prefers the candidate with
/// strictly worse performance. Pairs tied in either score or performance
/// are left out of the denominator.
pub fn selection_error_rate(scores: &[f64], perf: &[f64], orientation: Orientation) -> Result<f64> {
    check_aligned(scores, perf)?;
    let (mut wrong, mut total) = (0usize, 0usize);
    for (a, b) in decisive_pairs(scores, perf, orientation) {
        total += 1;
        if perf[a] < perf[b] {
            wrong += 1;
        }
    }
    if total == 0 {
        return Err(Error::Degenerate(
            "no pair has distinct scores and distinct performances".into(),
        ));
    }
    Ok(wrong as f64 / total as f64)
}

/// Largest performance shortfall of the measure's pick relative to the better
/// member of a pair; 0 when the measure never mis-selects.
pub fn max_regret(scores: &[f64], perf: &[f64], orientation: Orientation) -> Result<f64> {
    check_aligned(scores, perf)?;
    Ok(decisive_pairs(scores, perf, orientation)
        .map(|(a, b)| perf[b] - perf[a])
        .fold(0.0, f64::max))
}

/// Fractional ranks starting at 1; tied values share their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "spearman_rho needs two sequences of equal length >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(
            "spearman_rho input contains NaN".into(),
        ));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate(
            "Spearman correlation is undefined for constant ranks".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfRow {
    pub candidate_id: String,
    pub task: String,
    pub performance: f64,
    pub seed: u64,
}

/// Downstream results, one row per `(candidate_id, task, seed)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerformanceTable {
    rows: Vec<PerfRow>,
}

impl PerformanceTable {
    pub fn new(rows: Vec<PerfRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (i, r) in rows.iter().enumerate() {
            if !r.performance.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: performance is not finite"
                )));
            }
            if !seen.insert((&r.candidate_id, &r.task, r.seed)) {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: duplicate (candidate_id, task, seed) = ({}, {}, {})",
                    r.candidate_id, r.task, r.seed
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[PerfRow] {
        &self.rows
    }

    /// Sorted task names.
    pub fn tasks(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.rows.iter().map(|r| &r.task).collect();
        set.into_iter().cloned().collect()
    }

    /// Seed-averaged performance per candidate for one task.
    pub fn mean_by_candidate(&self, task: &str) -> BTreeMap<String, f64> {
        let mut groups: BTreeMap<&str, Vec<(u64, f64)>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.task == task) {
            groups
                .entry(&r.candidate_id)
                .or_default()
                .push((r.seed, r.performance));
        }
        groups
            .into_iter()
            .map(|(id, mut v)| {
                v.sort_by(|a, b| a.0.cmp(&b.0));
                let mean = v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64;
                (id.to_string(), mean)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: String,
    pub measure: MeasureName,
    pub orientation: Orientation,
    pub candidates: usize,
    pub spearman: Option<f64>,
    pub abs_spearman: Option<f64>,
    pub selection_error_rate: Option<f64>,
    pub max_regret: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub rows: Vec<SummaryRow>,
    /// Join problems and statistics that could not be computed.
    pub notes: Vec<String>,
}

/// Correlation, selection error rate and max regret of each measure against
/// seed-averaged downstream performance, per task. `tasks = None` uses every
/// task in the table.
pub fn evaluate_measures(
    reports: &BTreeMap<String, QualityReport>,
    perf: &PerformanceTable,
    tasks: Option<&[String]>,
    measures: &[MeasureSpec],
) -> EvaluationSummary {
    let tasks: Vec<String> = match tasks {
        Some(t) => t.to_vec(),
        None => perf.tasks(),
    };
    let mut summary = EvaluationSummary::default();
    for task in &tasks {
        let means = perf.mean_by_candidate(task);
        if means.is_empty() {
            summary
                .notes
                .push(format!("task {task:?}: no performance rows"));
            continue;
        }
        for id in means.keys().filter(|id| !reports.contains_key(*id)) {
            summary.notes.push(format!(
                "task {task:?}: candidate {id:?} has no quality report"
            ));
        }
        for id in reports.keys().filter(|id| !means.contains_key(*id)) {
            summary.notes.push(format!(
                "task {task:?}: candidate {id:?} has no performance rows"
            ));
        }
        for spec in measures {
            let mut scores = Vec::new();
            let mut values = Vec::new();
            for (id, p) in &means {
                if let Some(v) = reports.get(id).and_then(|r| spec.name.value(r)) {
                    scores.push(v);
                    values.push(*p);
                }
            }
            let mut note = |what: &str, e: Error| {
                summary
                    .notes
                    .push(format!("task {task:?}, measure {}: {what}: {e}", spec.name));
            };
            let spearman = spearman_rho(&scores, &values)
                .map_err(|e| note("spearman", e))
                .ok();
            let rate = selection_error_rate(&scores, &values, spec.orientation)
                .map_err(|e| note("selection error rate", e))
                .ok();
            let regret = max_regret(&scores, &values, spec.orientation)
                .map_err(|e| note("max regret", e))
                .ok();
            summary.rows.push(SummaryRow {
                task: task.clone(),
                measure: spec.name,
                orientation: spec.orientation,
                candidates: scores.len(),
                spearman,
                abs_spearman: spearman.map(f64::abs),
                selection_error_rate: rate,
                max_regret: regret,
            });
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{compress_pca, compress_uniform, ClipSearch, CompressionSpec, Rounding};
    use crate::measures::quality_report;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = stream_rng(seed, 31);
        DenseMatrix::new(
            n,
            d,
            (0..n * d)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect(),
        )
        .unwrap()
    }

    // Independent oracles: plain enumeration of every ordered pair.
    fn brute_error_rate(s: &[f64], p: &[f64], o: Orientation) -> Option<f64> {
        let (mut wrong, mut total) = (0, 0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i < j && s[i] != s[j] && p[i] != p[j] {
                    total += 1;
                    let pick = if o.prefers(s[i], s[j]) { i } else { j };
                    let other = i + j - pick;
                    if p[pick] < p[other] {
                        wrong += 1;
                    }
                }
            }
        }
        (total > 0).then(|| wrong as f64 / total as f64)
    }

    fn brute_regret(s: &[f64], p: &[f64], o: Orientation) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                if s[i] == s[j] || p[i] == p[j] {
                    continue;
                }
                let pick = if o.prefers(s[i], s[j]) { i } else { j };
                let best = if p[i] > p[j] { i } else { j };
                worst = worst.max(p[best] - p[pick]);
            }
        }
        worst
    }

    fn brute_spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|x| {
                    let below = v.iter().filter(|y| *y < x).count() as f64;
                    let equal = v.iter().filter(|y| *y == x).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let (ra, rb) = (rank(a), rank(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn error_rate_examples() {
        let o = Orientation::HigherBetter;
        assert_eq!(
            selection_error_rate(&[0.9, 0.5], &[0.8, 0.6], o).unwrap(),
            0.0
        );
        assert_eq!(
            selection_error_rate(&[0.9, 0.5], &[0.6, 0.8], o).unwrap(),
            1.0
        );
        assert!(selection_error_rate(&[0.9, 0.9], &[0.6, 0.8], o).is_err());
        assert!(selection_error_rate(&[0.9], &[0.6], o).is_err());
        let s = [0.9, 0.7, 0.5, 0.3];
        let p = [0.8, 0.85, 0.6, 0.61];
        assert_eq!(
            selection_error_rate(&s, &p, o).unwrap(),
            brute_error_rate(&s, &p, o).unwrap()
        );
    }

    #[test]
    fn regret_examples() {
        let o = Orientation::HigherBetter;
        assert_eq!(
            max_regret(&[3.0, 2.0, 1.0], &[0.9, 0.8, 0.7], o).unwrap(),
            0.0
        );
        let r = max_regret(&[0.9, 0.5], &[0.70, 0.73], o).unwrap();
        assert!((r - 0.03).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap() + 1.0).abs() < 1e-15);
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [1.0, 3.0, 2.0, 4.0];
        assert!((spearman_rho(&a, &b).unwrap() - brute_spearman(&a, &b)).abs() < 1e-14);
        assert_eq!(average_ranks(&a), vec![1.0, 2.5, 2.5, 4.0]);
        assert!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman_rho(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn select_best_cases() {
        let x = gaussian(120, 8, 1);
        let base = EmbeddingMatrix::from(x.clone());
        let spec = MeasureSpec::new(MeasureName::EigenspaceOverlap);
        let one = compress_uniform(&x, 1, Rounding::Deterministic, 0).unwrap();
        assert_eq!(
            select_best(&base, std::slice::from_ref(&one), &spec)
                .unwrap()
                .index,
            0
        );

        let lossless = compress_pca(&x, 8, true).unwrap();
        let sel = select_best(&base, &[one.clone(), lossless], &spec).unwrap();
        assert_eq!(sel.index, 1);

        let cands: Vec<_> = [1u8, 2, 4]
            .iter()
            .map(|&b| compress_uniform(&x, b, Rounding::Deterministic, 0).unwrap())
            .collect();
        let sel = select_best(&base, &cands, &spec).unwrap();
        let s: Vec<f64> = sel.scores.iter().map(|v| v.unwrap()).collect();
        assert!(s[0] < s[1] && s[1] < s[2], "{s:?}");
        assert_eq!(sel.index, 2);
    }

    #[test]
    fn select_best_excludes_inapplicable() {
        let x = gaussian(60, 6, 2);
        let base = EmbeddingMatrix::from(x.clone());
        let reduced = compress_pca(&x, 2, false).unwrap();
        let full = crate::compress::compress(
            &x,
            &CompressionSpec::Uniform {
                bits: 2,
                rounding: Rounding::Deterministic,
                search: ClipSearch::default(),
            },
            0,
        )
        .unwrap();
        let spec = MeasureSpec::new(MeasureName::ReconstructionError);
        let sel = select_best(&base, &[reduced.clone(), full], &spec).unwrap();
        assert_eq!(sel.index, 1);
        assert_eq!(sel.scores[0], None);
        assert_eq!(sel.warnings.len(), 1);
        assert!(select_best(&base, &[reduced], &spec).is_err());
        assert!(select_best(&base, &[], &spec).is_err());
    }

    fn reports_for(values: &[f64]) -> BTreeMap<String, QualityReport> {
        let x = gaussian(30, 3, 5);
        let template = quality_report(&x, &x, None).unwrap();
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut r = template.clone();
                r.eigenspace_overlap = v;
                (format!("c{i}"), r)
            })
            .collect()
    }

    fn table(perf: &[f64], seeds: u64) -> PerformanceTable {
        let mut rows = Vec::new();
        for (i, &p) in perf.iter().enumerate() {
            for s in 0..seeds {
                rows.push(PerfRow {
                    candidate_id: format!("c{i}"),
                    task: "qa".into(),
                    performance: p + 0.001 * s as f64,
                    seed: s,
                });
            }
        }
        PerformanceTable::new(rows).unwrap()
    }

    #[test]
    fn evaluate_concordant_and_inverted() {
        let reports = reports_for(&[0.9, 0.8, 0.7, 0.6]);
        let spec = [MeasureSpec::new(MeasureName::EigenspaceOverlap)];
        let good = evaluate_measures(&reports, &table(&[0.5, 0.4, 0.3, 0.2], 3), None, &spec);
        assert_eq!(good.rows[0].abs_spearman, Some(1.0));
        assert_eq!(good.rows[0].selection_error_rate, Some(0.0));
        let bad = evaluate_measures(&reports, &table(&[0.2, 0.3, 0.4, 0.5], 3), None, &spec);
        assert_eq!(bad.rows[0].selection_error_rate, Some(1.0));
        assert_eq!(bad.rows[0].spearman, Some(-1.0));
    }

    #[test]
    fn evaluate_mixed_matches_oracle_and_notes_missing() {
        let scores = [0.9, 0.2, 0.5, 0.7, 0.4];
        let perf = [0.6, 0.3, 0.65, 0.5, 0.1];
        let mut reports = reports_for(&scores);
        reports.insert("orphan".into(), reports["c0"].clone());
        let specs = [MeasureSpec::new(MeasureName::EigenspaceOverlap)];
        let out = evaluate_measures(
            &reports,
            &table(&perf, 1),
            Some(&["qa".to_string()]),
            &specs,
        );
        let row = &out.rows[0];
        let o = Orientation::HigherBetter;
        assert_eq!(row.candidates, 5);
        assert_eq!(
            row.selection_error_rate,
            brute_error_rate(&scores, &perf, o)
        );
        assert_eq!(row.max_regret, Some(brute_regret(&scores, &perf, o)));
        assert!((row.spearman.unwrap() - brute_spearman(&scores, &perf)).abs() < 1e-14);
        assert!(out.notes.iter().any(|n| n.contains("orphan")));
    }

    #[test]
    fn duplicate_perf_rows_rejected() {
        let row = PerfRow {
            candidate_id: "a".into(),
            task: "t".into(),
            performance: 1.0,
            seed: 0,
        };
        assert!(PerformanceTable::new(vec![row.clone(), row]).is_err());
    }

    #[test]
    fn measure_names_round_trip() {
        for m in MeasureName::ALL {
            assert_eq!(m.as_str().parse::<MeasureName>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.as_str())
            );
        }
        assert!("overlap".parse::<MeasureName>().is_err());
    }

    fn small_table() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=6).prop_flat_map(|n| {
            (
                prop::collection::vec(0i32..5, n)
                    .prop_map(|v| v.into_iter().map(f64::from).collect()),
                prop::collection::vec(0i32..5, n)
                    .prop_map(|v| v.into_iter().map(f64::from).collect()),
            )
        })
    }

    proptest! {
        #[test]
        fn pair_statistics_match_brute_force((s, p) in small_table(), higher in any::<bool>()) {
            let o = if higher { Orientation::HigherBetter } else { Orientation::LowerBetter };
            match brute_error_rate(&s, &p, o) {
                Some(want) => prop_assert_eq!(selection_error_rate(&s, &p, o).unwrap(), want),
                None => prop_assert!(selection_error_rate(&s, &p, o).is_err()),
            }
            prop_assert_eq!(max_regret(&s, &p, o).unwrap(), brute_regret(&s, &p, o));
        }

        #[test]
        fn spearman_matches_brute_force((a, b) in small_table()) {
            match spearman_rho(&a, &b) {
                Ok(r) => {
                    prop_assert!((r - brute_spearman(&a, &b)).abs() < 1e-12);
                    prop_assert!((-1.0..=1.0).contains(&r));
                }
                Err(_) => prop_assert!(a.iter().all(|v| *v == a[0]) || b.iter().all(|v| *v == b[0])),
            }
        }

        #[test]
        fn spearman_monotone_invariant((a, b) in small_table()) {
            let ta: Vec<f64> = a.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
            if let (Ok(r1), Ok(r2)) = (spearman_rho(&a, &b), spearman_rho(&ta, &b)) {
                prop_assert!((r1 - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn reversing_orientation_complements_rate(s in prop::collection::btree_set(0i32..100, 2..7), seed in 0u64..1000) {
            let s: Vec<f64> = s.into_iter().map(f64::from).collect();
            // distinct performances
            let p: Vec<f64> = (0..s.len()).map(|i| ((i as u64 * 7919 + seed) % 1009) as f64 + i as f64 * 1e-3).collect();
            let e = selection_error_rate(&s, &p, Orientation::HigherBetter).unwrap();
            let r = selection_error_rate(&s, &p, Orientation::LowerBetter).unwrap();
            prop_assert!((e + r - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&e));
        }

        #[test]
        fn argbest_monotone_invariant(v in prop::collection::vec(-50i32..50, 1..8), higher in any::<bool>()) {
            let o = if higher { Orientation::HigherBetter } else { Orientation::LowerBetter };
            let raw: Vec<Option<f64>> = v.iter().map(|x| Some(f64::from(*x))).collect();
            let mapped: Vec<Option<f64>> = raw.iter().map(|x| x.map(|y| y.powi(3) + 2.0 * y)).collect();
            prop_assert_eq!(argbest(&raw, o), argbest(&mapped, o));
        }
    }
}

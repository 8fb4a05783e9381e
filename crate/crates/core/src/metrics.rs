//! Sequence metrics: skill recall (SR), parameter recall (PR), skill and
//! parameter recall (SPR), precise matching (PM), their weighted total, and
//! the Progress Score.
//!
//! Intersections are multiset intersections. Parameter values compare under
//! [`Equivalence`], which is tolerance-based and therefore not transitive, so
//! the intersection size is computed as a maximum bipartite matching.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsl::{ParamValue, SkillCall, SkillSequence};
use crate::graph::{self, DepGraph, GraphError, MatchPolicy};

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("reference has nothing to recall for {0}")]
    EmptyReference(&'static str),
    #[error("invalid metric weights: {0}")]
    InvalidWeights(String),
    #[error("invalid progress counts: {0}")]
    InvalidCounts(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Equality semantics for parameters, targets and whole calls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub abs_tol: f64,
}

impl Default for Equivalence {
    fn default() -> Self {
        Self { abs_tol: DEFAULT_TOLERANCE }
    }
}

/// Maps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

impl Equivalence {
    pub fn numbers_equal(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.abs_tol
    }

    pub fn angles_equal(&self, a: f64, b: f64) -> bool {
        normalize_angle(normalize_angle(a) - normalize_angle(b)).abs() <= self.abs_tol
    }

    pub fn text_equal(&self, a: &str, b: &str) -> bool {
        let (a, b) = (a.trim(), b.trim());
        if a.is_ascii() && b.is_ascii() {
            return a.eq_ignore_ascii_case(b);
        }
        a.len() == b.len() && a.chars().zip(b.chars()).all(|(x, y)| x.to_lowercase().eq(y.to_lowercase()))
    }

    pub fn params_equal(&self, a: &ParamValue, b: &ParamValue) -> bool {
        use ParamValue::*;
        let all = |xs: &[f64], ys: &[f64], f: &dyn Fn(f64, f64) -> bool| {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| f(*x, *y))
        };
        match (a, b) {
            (Scalar(x), Scalar(y)) => self.numbers_equal(*x, *y),
            (Position(x), Position(y)) => all(x, y, &|p, q| self.numbers_equal(p, q)),
            (Angles(x), Angles(y)) => all(x, y, &|p, q| self.angles_equal(p, q)),
            (List(x), List(y)) => all(x, y, &|p, q| self.numbers_equal(p, q)),
            (Text(x), Text(y)) => self.text_equal(x, y),
            _ => false,
        }
    }

    /// Same skill, equivalent target, same key set with equivalent values.
    pub fn calls_equal(&self, a: &SkillCall, b: &SkillCall) -> bool {
        a.skill == b.skill
            && self.text_equal(&a.target, &b.target)
            && a.params.len() == b.params.len()
            && a.params.iter().all(|(k, v)| b.params.get(k).is_some_and(|w| self.params_equal(v, w)))
    }
}

/// [`Equivalence::params_equal`] at the default tolerance.
pub fn canonical_param_equal(a: &ParamValue, b: &ParamValue) -> bool {
    Equivalence::default().params_equal(a, b)
}

/// Size of the largest one-to-one pairing of equivalent items (Kuhn's algorithm).
pub fn multiset_intersection<T>(reference: &[T], prediction: &[T], eq: impl Fn(&T, &T) -> bool) -> usize {
    if reference.len() <= 64 && prediction.len() <= 64 {
        return small_intersection(reference, prediction, eq);
    }
    let adj: Vec<Vec<usize>> = reference
        .iter()
        .map(|r| prediction.iter().enumerate().filter(|(_, p)| eq(r, p)).map(|(j, _)| j).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; prediction.len()];

    fn augment(i: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &j in &adj[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, adj, owner, seen)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }

    let mut matched = 0;
    for i in 0..reference.len() {
        let mut seen = vec![false; prediction.len()];
        if augment(i, &adj, &mut owner, &mut seen) {
            matched += 1;
        }
    }
    matched
}

/// Kuhn's algorithm on bit masks, for at most 64 items per side.
fn small_intersection<T>(reference: &[T], prediction: &[T], eq: impl Fn(&T, &T) -> bool) -> usize {
    const FREE: u8 = u8::MAX;
    let mut adj = [0u64; 64];
    for (i, r) in reference.iter().enumerate() {
        for (j, p) in prediction.iter().enumerate() {
            if eq(r, p) {
                adj[i] |= 1 << j;
            }
        }
    }
    let mut owner = [FREE; 64];

    fn augment(i: usize, adj: &[u64; 64], owner: &mut [u8; 64], seen: &mut u64) -> bool {
        let mut open = adj[i] & !*seen;
        while open != 0 {
            let j = open.trailing_zeros() as usize;
            open &= open - 1;
            if *seen & (1 << j) != 0 {
                continue;
            }
            *seen |= 1 << j;
            if owner[j] == FREE || augment(owner[j] as usize, adj, owner, seen) {
                owner[j] = i as u8;
                return true;
            }
        }
        false
    }

    let mut matched = 0;
    for i in 0..reference.len() {
        if adj[i] != 0 && augment(i, &adj, &mut owner, &mut 0) {
            matched += 1;
        }
    }
    matched
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub matched: usize,
    pub total: usize,
}

impl Ratio {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }
}

pub fn skill_recall_counts(reference: &SkillSequence, prediction: &SkillSequence) -> Ratio {
    let matched = multiset_intersection(&reference.calls, &prediction.calls, |a, b| a.skill == b.skill);
    Ratio { matched, total: reference.len() }
}

pub fn skill_recall(reference: &SkillSequence, prediction: &SkillSequence) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference("skill recall"));
    }
    Ok(skill_recall_counts(reference, prediction).value())
}

fn param_entries(seq: &SkillSequence) -> Vec<(&str, &ParamValue)> {
    seq.calls.iter().flat_map(|c| c.params.iter().map(|(k, v)| (k.as_str(), v))).collect()
}

/// Parameter entries are pooled across all calls before intersecting.
pub fn param_recall_counts(reference: &SkillSequence, prediction: &SkillSequence, eq: &Equivalence) -> Ratio {
    let r = param_entries(reference);
    let p = param_entries(prediction);
    let matched = multiset_intersection(&r, &p, |a, b| a.0 == b.0 && eq.params_equal(a.1, b.1));
    Ratio { matched, total: r.len() }
}

pub fn param_recall(reference: &SkillSequence, prediction: &SkillSequence, eq: &Equivalence) -> Result<f64, MetricError> {
    let counts = param_recall_counts(reference, prediction, eq);
    if counts.total == 0 {
        return Err(MetricError::EmptyReference("parameter recall"));
    }
    Ok(counts.value())
}

pub fn skill_param_recall_counts(reference: &SkillSequence, prediction: &SkillSequence, eq: &Equivalence) -> Ratio {
    let matched = multiset_intersection(&reference.calls, &prediction.calls, |a, b| eq.calls_equal(a, b));
    Ratio { matched, total: reference.len() }
}

pub fn skill_param_recall(
    reference: &SkillSequence,
    prediction: &SkillSequence,
    eq: &Equivalence,
) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference("skill and parameter recall"));
    }
    Ok(skill_param_recall_counts(reference, prediction, eq).value())
}

pub fn precise_matching_counts(
    reference: &DepGraph,
    prediction: &DepGraph,
    eq: &Equivalence,
    policy: MatchPolicy,
) -> Result<Ratio, MetricError> {
    let m = graph::max_matching(reference, prediction, eq, policy)?;
    Ok(Ratio { matched: m.matched_count, total: reference.len() })
}

pub fn precise_matching(reference: &DepGraph, prediction: &DepGraph) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference("precise matching"));
    }
    Ok(precise_matching_counts(reference, prediction, &Equivalence::default(), MatchPolicy::default())?.value())
}

/// Convex weights for SR, PR, SPR and PM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct MetricWeights([f64; 4]);

impl Default for MetricWeights {
    fn default() -> Self {
        Self([0.25; 4])
    }
}

impl MetricWeights {
    pub fn new(w: [f64; 4]) -> Result<Self, MetricError> {
        if let Some(bad) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(MetricError::InvalidWeights(format!("weight {bad} outside [0, 1]")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

impl TryFrom<[f64; 4]> for MetricWeights {
    type Error = MetricError;
    fn try_from(w: [f64; 4]) -> Result<Self, MetricError> {
        Self::new(w)
    }
}

impl From<MetricWeights> for [f64; 4] {
    fn from(w: MetricWeights) -> Self {
        w.0
    }
}

impl FromStr for MetricWeights {
    type Err = MetricError;

    /// Parses `w1,w2,w3,w4`.
    fn from_str(s: &str) -> Result<Self, MetricError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MetricError::InvalidWeights(format!("`{s}`: {e}")))?;
        let w: [f64; 4] = parts
            .try_into()
            .map_err(|_| MetricError::InvalidWeights(format!("`{s}`: expected four comma-separated values")))?;
        Self::new(w)
    }
}

impl fmt::Display for MetricWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a},{b},{c},{d}")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricComponents {
    pub sr: f64,
    pub pr: f64,
    pub spr: f64,
    pub pm: f64,
}

pub fn overall_score(c: &MetricComponents, weights: &MetricWeights) -> f64 {
    let [w1, w2, w3, w4] = weights.0;
    w1 * c.sr + w2 * c.pr + w3 * c.spr + w4 * c.pm
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub sr: Ratio,
    pub pr: Ratio,
    pub spr: Ratio,
    pub pm: Ratio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sr: f64,
    pub pr: f64,
    pub spr: f64,
    pub pm: f64,
    pub total: f64,
    pub counts: MetricCounts,
    pub weights: MetricWeights,
}

impl MetricReport {
    pub fn zero(reference_counts: MetricCounts, weights: MetricWeights) -> Self {
        Self { sr: 0.0, pr: 0.0, spr: 0.0, pm: 0.0, total: 0.0, counts: reference_counts, weights }
    }

    pub fn components(&self) -> MetricComponents {
        MetricComponents { sr: self.sr, pr: self.pr, spr: self.spr, pm: self.pm }
    }
}

/// All four metrics and the weighted total for one prediction.
///
/// A reference without parameter entries makes PR vacuous: it scores 1 when
/// the prediction recovered any call and 0 otherwise.
pub fn score_sequences(
    reference: &SkillSequence,
    reference_graph: &DepGraph,
    prediction: &SkillSequence,
    prediction_graph: &DepGraph,
    weights: &MetricWeights,
    eq: &Equivalence,
    policy: MatchPolicy,
) -> Result<MetricReport, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference("reference sequence"));
    }
    let counts = MetricCounts {
        sr: skill_recall_counts(reference, prediction),
        pr: param_recall_counts(reference, prediction, eq),
        spr: skill_param_recall_counts(reference, prediction, eq),
        pm: precise_matching_counts(reference_graph, prediction_graph, eq, policy)?,
    };
    let pr = if counts.pr.total == 0 {
        if prediction.is_empty() {
            0.0
        } else {
            1.0
        }
    } else {
        counts.pr.value()
    };
    let components = MetricComponents { sr: counts.sr.value(), pr, spr: counts.spr.value(), pm: counts.pm.value() };
    Ok(MetricReport {
        sr: components.sr,
        pr: components.pr,
        spr: components.spr,
        pm: components.pm,
        total: overall_score(&components, weights),
        counts,
        weights: *weights,
    })
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressInput {
    /// Number of target objects and receptacles.
    pub n_total: usize,
    pub n_correct: usize,
    /// Number of sub-steps.
    pub m_total: usize,
    pub m_done: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl ProgressInput {
    pub fn new(n_total: usize, n_correct: usize, m_total: usize, m_done: usize) -> Self {
        Self { n_total, n_correct, m_total, m_done, alpha: DEFAULT_ALPHA }
    }
}

/// `alpha * n_correct / N + (1 - alpha) * m_done / M`.
pub fn progress_score(input: &ProgressInput) -> Result<f64, MetricError> {
    let ProgressInput { n_total, n_correct, m_total, m_done, alpha } = *input;
    if n_total == 0 || m_total == 0 {
        return Err(MetricError::InvalidCounts("N and M must be at least 1".into()));
    }
    if n_correct > n_total || m_done > m_total {
        return Err(MetricError::InvalidCounts(format!(
            "n_correct={n_correct} of N={n_total}, m_done={m_done} of M={m_total}"
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MetricError::InvalidCounts(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(alpha * (n_correct as f64 / n_total as f64) + (1.0 - alpha) * (m_done as f64 / m_total as f64))
}

//! Shared domain types: discrete domains, probability vectors, per-group
//! channels and columnar sample tables.
//!
//! Everything here is immutable once built. Constructors validate their
//! invariants and return [`TypeError`] on violation, so downstream modules can
//! rely on well-formed inputs.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Default tolerance for "sums to one" checks.
pub const PROB_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("domain is empty")]
    EmptyDomain,
    #[error("domain is not strictly increasing at index {index}")]
    UnorderedDomain { index: usize },
    #[error("expected {expected} entries aligned with the domain, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid probability vector: {0}")]
    Prob(Violation),
    #[error("invalid channel: {0}")]
    Channel(ChannelViolation),
    #[error("group {0} is outside the declared group count {1}")]
    GroupOutOfRange(usize, usize),
    #[error("row {row}: {column} value {value} is outside its domain")]
    ValueOutOfDomain { row: usize, column: &'static str, value: i64 },
    #[error("column {column} has {got} rows, expected {expected}")]
    ColumnLength { column: &'static str, expected: usize, got: usize },
    #[error("distributions do not share a domain")]
    DomainMismatch,
    #[error("need at least one group")]
    NoGroups,
}

/// An ordered finite set of integer values.
///
/// `E` and `Z` both range over a `Domain`. Lookups from value to index are a
/// bijection over [`Domain::values`].
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Domain {
    values: Arc<[i64]>,
}

impl Domain {
    pub fn new(values: Vec<i64>) -> Result<Self, TypeError> {
        if values.is_empty() {
            return Err(TypeError::EmptyDomain);
        }
        if let Some(index) = values.windows(2).position(|w| w[0] >= w[1]) {
            return Err(TypeError::UnorderedDomain { index: index + 1 });
        }
        Ok(Self { values: values.into() })
    }

    /// The inclusive integer range `min..=max`.
    pub fn range(min: i64, max: i64) -> Result<Self, TypeError> {
        Self::new((min..=max).collect())
    }

    pub fn values(&self) -> &[i64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, value: i64) -> Option<usize> {
        self.values.binary_search(&value).ok()
    }

    pub fn value(&self, index: usize) -> i64 {
        self.values[index]
    }

    pub fn contains(&self, value: i64) -> bool {
        self.index_of(value).is_some()
    }

    pub fn min(&self) -> i64 {
        self.values[0]
    }

    pub fn max(&self) -> i64 {
        self.values[self.values.len() - 1]
    }

    /// Sorted union of two domains.
    pub fn union(&self, other: &Domain) -> Domain {
        let mut values: Vec<i64> = self.values.iter().chain(other.values.iter()).copied().collect();
        values.sort_unstable();
        values.dedup();
        Domain { values: values.into() }
    }

    /// Index of the domain value nearest to `x`, ties toward the smaller value.
    pub fn nearest_index(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &v) in self.values.iter().enumerate() {
            let d = (v as f64 - x).abs();
            if d < best_dist {
                best = i;
                best_dist = d;
            }
        }
        best
    }
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let contiguous = self.values.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous {
            write!(f, "Domain({}..={})", self.min(), self.max())
        } else {
            f.debug_tuple("Domain").field(&&*self.values).finish()
        }
    }
}

/// Sensitive-attribute group identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupLabel(pub usize);

impl GroupLabel {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// First violated probability-vector invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Negative { index: usize, value: f64 },
    NotFinite { index: usize },
    Sum { sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Negative { index, value } => write!(f, "entry {index} is negative ({value})"),
            Violation::NotFinite { index } => write!(f, "entry {index} is not finite"),
            Violation::Sum { sum } => write!(f, "sum={sum}"),
        }
    }
}

/// Checks non-negativity and normalization of `mass` at tolerance `tol`.
pub fn check_mass(mass: &[f64], tol: f64) -> Result<(), Violation> {
    for (index, &value) in mass.iter().enumerate() {
        if !value.is_finite() {
            return Err(Violation::NotFinite { index });
        }
        if value < 0.0 {
            return Err(Violation::Negative { index, value });
        }
    }
    let sum: f64 = mass.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Violation::Sum { sum });
    }
    Ok(())
}

/// A probability vector aligned with a [`Domain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    domain: Domain,
    mass: Vec<f64>,
}

impl ProbVector {
    pub fn new(domain: Domain, mass: Vec<f64>) -> Result<Self, TypeError> {
        Self::with_tolerance(domain, mass, PROB_TOLERANCE)
    }

    pub fn with_tolerance(domain: Domain, mass: Vec<f64>, tol: f64) -> Result<Self, TypeError> {
        if mass.len() != domain.len() {
            return Err(TypeError::LengthMismatch { expected: domain.len(), got: mass.len() });
        }
        check_mass(&mass, tol).map_err(TypeError::Prob)?;
        Ok(Self { domain, mass })
    }

    /// Builds without validation. Callers must uphold the invariants.
    pub(crate) fn from_parts_unchecked(domain: Domain, mass: Vec<f64>) -> Self {
        debug_assert_eq!(domain.len(), mass.len());
        Self { domain, mass }
    }

    pub fn uniform(domain: Domain) -> Self {
        let n = domain.len();
        Self { domain, mass: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(domain: Domain, index: usize) -> Self {
        let mut mass = vec![0.0; domain.len()];
        mass[index] = 1.0;
        Self { domain, mass }
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Probability of a domain value; zero for values outside the domain.
    pub fn prob_of(&self, value: i64) -> f64 {
        self.domain.index_of(value).map_or(0.0, |i| self.mass[i])
    }

    /// Re-expresses the vector over a larger domain, filling missing values with zero mass.
    pub fn embed(&self, target: &Domain) -> Result<ProbVector, TypeError> {
        let mut mass = vec![0.0; target.len()];
        for (&v, &p) in self.domain.values().iter().zip(&self.mass) {
            let i = target.index_of(v).ok_or(TypeError::DomainMismatch)?;
            mass[i] = p;
        }
        Ok(ProbVector { domain: target.clone(), mass })
    }

    pub fn mean(&self) -> f64 {
        self.domain.values().iter().zip(&self.mass).map(|(&v, &p)| v as f64 * p).sum()
    }
}

/// Validation report for [`validate_prob_vector`] and [`validate_channel`].
#[derive(Debug, Clone, PartialEq)]
pub enum Validation<V> {
    Ok,
    Violation(V),
}

impl<V> Validation<V> {
    pub fn is_ok(&self) -> bool {
        matches!(self, Validation::Ok)
    }
}

pub fn validate_prob_vector(v: &ProbVector) -> Validation<Violation> {
    validate_prob_vector_with(v, PROB_TOLERANCE)
}

pub fn validate_prob_vector_with(v: &ProbVector, tol: f64) -> Validation<Violation> {
    if v.mass.len() != v.domain.len() {
        return Validation::Violation(Violation::Sum { sum: f64::NAN });
    }
    match check_mass(&v.mass, tol) {
        Ok(()) => Validation::Ok,
        Err(e) => Validation::Violation(e),
    }
}

/// One probability vector per group, all over one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDistribution {
    domain: Domain,
    groups: Vec<ProbVector>,
}

impl GroupedDistribution {
    pub fn new(groups: Vec<ProbVector>) -> Result<Self, TypeError> {
        let domain = groups.first().ok_or(TypeError::NoGroups)?.domain.clone();
        if groups.iter().any(|g| g.domain != domain) {
            return Err(TypeError::DomainMismatch);
        }
        Ok(Self { domain, groups })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, s: GroupLabel) -> &ProbVector {
        &self.groups[s.0]
    }

    pub fn groups(&self) -> &[ProbVector] {
        &self.groups
    }

    /// Mixture `Σ_s weight[s] · P[·|s]`.
    pub fn mixture(&self, weights: &[f64]) -> Result<ProbVector, TypeError> {
        if weights.len() != self.groups.len() {
            return Err(TypeError::LengthMismatch { expected: self.groups.len(), got: weights.len() });
        }
        let mut mass = vec![0.0; self.domain.len()];
        for (g, &w) in self.groups.iter().zip(weights) {
            for (m, &p) in mass.iter_mut().zip(&g.mass) {
                *m += w * p;
            }
        }
        ProbVector::new(self.domain.clone(), mass)
    }
}

/// Row-violation report for a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelViolation {
    pub group: usize,
    /// Value of `e` labelling the offending row.
    pub e: i64,
    pub row: usize,
    pub violation: Violation,
}

impl fmt::Display for ChannelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "group {} row {} (e={}): {}", self.group, self.row, self.e, self.violation)
    }
}

/// Per-group row-stochastic matrix `P[Z=z | E=e, S=s]`.
///
/// Rows are indexed by `e`, columns by `z`. Storage is row-major per group.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    e_domain: Domain,
    z_domain: Domain,
    matrices: Vec<Vec<f64>>,
}

impl Channel {
    /// Builds a channel from row-major matrices, one per group.
    pub fn new(e_domain: Domain, z_domain: Domain, matrices: Vec<Vec<f64>>) -> Result<Self, TypeError> {
        let channel = Self::new_unchecked(e_domain, z_domain, matrices)?;
        match validate_channel(&channel) {
            Validation::Ok => Ok(channel),
            Validation::Violation(v) => Err(TypeError::Channel(v)),
        }
    }

    /// Checks only the shapes; rows may violate stochasticity.
    pub fn new_unchecked(e_domain: Domain, z_domain: Domain, matrices: Vec<Vec<f64>>) -> Result<Self, TypeError> {
        if matrices.is_empty() {
            return Err(TypeError::NoGroups);
        }
        let expected = e_domain.len() * z_domain.len();
        if let Some(m) = matrices.iter().find(|m| m.len() != expected) {
            return Err(TypeError::LengthMismatch { expected, got: m.len() });
        }
        Ok(Self { e_domain, z_domain, matrices })
    }

    /// Identity channel over a shared domain (`Z ≡ E`).
    pub fn identity(domain: Domain, groups: usize) -> Self {
        let n = domain.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            m[i * n + i] = 1.0;
        }
        Self { e_domain: domain.clone(), z_domain: domain, matrices: vec![m; groups] }
    }

    /// Every row uniform over `Z`.
    pub fn uniform(e_domain: Domain, z_domain: Domain, groups: usize) -> Self {
        let m = vec![1.0 / z_domain.len() as f64; e_domain.len() * z_domain.len()];
        Self { e_domain, z_domain, matrices: vec![m; groups] }
    }

    /// Same row-major matrix for every group.
    pub fn shared(e_domain: Domain, z_domain: Domain, matrix: Vec<f64>, groups: usize) -> Result<Self, TypeError> {
        Self::new(e_domain, z_domain, vec![matrix; groups])
    }

    pub fn e_domain(&self) -> &Domain {
        &self.e_domain
    }

    pub fn z_domain(&self) -> &Domain {
        &self.z_domain
    }

    pub fn num_groups(&self) -> usize {
        self.matrices.len()
    }

    /// Row-major matrix of group `s`.
    pub fn matrix(&self, s: GroupLabel) -> &[f64] {
        &self.matrices[s.0]
    }

    pub fn row(&self, s: GroupLabel, e_index: usize) -> &[f64] {
        let nz = self.z_domain.len();
        &self.matrices[s.0][e_index * nz..(e_index + 1) * nz]
    }

    pub fn prob(&self, s: GroupLabel, e_index: usize, z_index: usize) -> f64 {
        self.matrices[s.0][e_index * self.z_domain.len() + z_index]
    }
}

pub fn validate_channel(c: &Channel) -> Validation<ChannelViolation> {
    validate_channel_with(c, PROB_TOLERANCE)
}

pub fn validate_channel_with(c: &Channel, tol: f64) -> Validation<ChannelViolation> {
    for (group, _) in c.matrices.iter().enumerate() {
        for row in 0..c.e_domain.len() {
            if let Err(violation) = check_mass(c.row(GroupLabel(group), row), tol) {
                return Validation::Violation(ChannelViolation { group, e: c.e_domain.value(row), row, violation });
            }
        }
    }
    Validation::Ok
}

/// Positive-decision threshold on `E` (or `Z`, for the baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionThreshold {
    pub tau: i64,
    /// `true`: positive iff value > tau. `false`: positive iff value ≥ tau.
    pub strict: bool,
}

impl DecisionThreshold {
    pub fn new(tau: i64, strict: bool) -> Self {
        Self { tau, strict }
    }

    /// Checks that `tau` lies within the bounds of `domain`.
    pub fn validate(&self, domain: &Domain) -> Result<(), TypeError> {
        if self.tau < domain.min() || self.tau > domain.max() {
            return Err(TypeError::ValueOutOfDomain { row: 0, column: "tau", value: self.tau });
        }
        Ok(())
    }

    pub fn is_positive(&self, value: i64) -> bool {
        if self.strict {
            value > self.tau
        } else {
            value >= self.tau
        }
    }

    pub fn decide(&self, value: i64) -> u8 {
        u8::from(self.is_positive(value))
    }
}

/// Which decision rule produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecisionMethod {
    /// Modal point estimate of `E`, then threshold.
    Mode,
    /// Threshold-mass comparison on the posterior.
    Mass,
}

impl DecisionMethod {
    pub fn code(self) -> u8 {
        match self {
            DecisionMethod::Mode => 1,
            DecisionMethod::Mass => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DecisionMethod::Mode),
            2 => Some(DecisionMethod::Mass),
            _ => None,
        }
    }
}

/// Columnar record set of `(s, z, e?, y?, e_hat?, y_hat?, method_used?, abstained?)`.
///
/// Optional columns are either absent (`None`) or carry one optional value per
/// row. A column whose values are all missing is normalized to absent on
/// construction, so CSV round trips are exact.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleTable {
    pub(crate) s: Vec<GroupLabel>,
    pub(crate) z: Vec<i64>,
    pub(crate) e: Option<Vec<Option<i64>>>,
    pub(crate) y: Option<Vec<Option<u8>>>,
    pub(crate) e_hat: Option<Vec<Option<i64>>>,
    pub(crate) y_hat: Option<Vec<Option<u8>>>,
    pub(crate) method_used: Option<Vec<Option<DecisionMethod>>>,
    pub(crate) abstained: Option<Vec<Option<bool>>>,
}

fn normalize<T>(col: Option<Vec<Option<T>>>) -> Option<Vec<Option<T>>> {
    col.filter(|c| c.iter().any(Option::is_some))
}

fn check_len<T>(col: &Option<Vec<T>>, column: &'static str, expected: usize) -> Result<(), TypeError> {
    match col {
        Some(c) if c.len() != expected => Err(TypeError::ColumnLength { column, expected, got: c.len() }),
        _ => Ok(()),
    }
}

impl SampleTable {
    /// Observation-only table.
    pub fn new(s: Vec<GroupLabel>, z: Vec<i64>) -> Result<Self, TypeError> {
        if s.len() != z.len() {
            return Err(TypeError::ColumnLength { column: "z", expected: s.len(), got: z.len() });
        }
        Ok(Self { s, z, ..Default::default() })
    }

    /// Table with ground-truth `e` and `y` for every row.
    pub fn with_truth(s: Vec<GroupLabel>, z: Vec<i64>, e: Vec<i64>, y: Vec<u8>) -> Result<Self, TypeError> {
        Self::new(s, z)?
            .with_e(Some(e.into_iter().map(Some).collect()))?
            .with_y(Some(y.into_iter().map(Some).collect()))
    }

    pub fn with_e(mut self, e: Option<Vec<Option<i64>>>) -> Result<Self, TypeError> {
        check_len(&e, "e", self.len())?;
        self.e = normalize(e);
        Ok(self)
    }

    pub fn with_y(mut self, y: Option<Vec<Option<u8>>>) -> Result<Self, TypeError> {
        check_len(&y, "y", self.len())?;
        self.y = normalize(y);
        Ok(self)
    }

    pub fn with_e_hat(mut self, e_hat: Option<Vec<Option<i64>>>) -> Result<Self, TypeError> {
        check_len(&e_hat, "e_hat", self.len())?;
        self.e_hat = normalize(e_hat);
        Ok(self)
    }

    pub fn with_y_hat(mut self, y_hat: Option<Vec<Option<u8>>>) -> Result<Self, TypeError> {
        check_len(&y_hat, "y_hat", self.len())?;
        self.y_hat = normalize(y_hat);
        Ok(self)
    }

    pub fn with_method_used(mut self, m: Option<Vec<Option<DecisionMethod>>>) -> Result<Self, TypeError> {
        check_len(&m, "method_used", self.len())?;
        self.method_used = normalize(m);
        Ok(self)
    }

    pub fn with_abstained(mut self, a: Option<Vec<Option<bool>>>) -> Result<Self, TypeError> {
        check_len(&a, "abstained", self.len())?;
        self.abstained = normalize(a);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn s(&self) -> &[GroupLabel] {
        &self.s
    }

    pub fn z(&self) -> &[i64] {
        &self.z
    }

    pub fn e(&self) -> Option<&[Option<i64>]> {
        self.e.as_deref()
    }

    pub fn y(&self) -> Option<&[Option<u8>]> {
        self.y.as_deref()
    }

    pub fn e_hat(&self) -> Option<&[Option<i64>]> {
        self.e_hat.as_deref()
    }

    pub fn y_hat(&self) -> Option<&[Option<u8>]> {
        self.y_hat.as_deref()
    }

    pub fn method_used(&self) -> Option<&[Option<DecisionMethod>]> {
        self.method_used.as_deref()
    }

    pub fn abstained(&self) -> Option<&[Option<bool>]> {
        self.abstained.as_deref()
    }

    /// Whether any decoder-derived column is present.
    pub fn has_derived(&self) -> bool {
        self.e_hat.is_some() || self.y_hat.is_some() || self.method_used.is_some() || self.abstained.is_some()
    }

    /// Number of groups implied by the largest label present.
    pub fn num_groups(&self) -> usize {
        self.s.iter().map(|g| g.0 + 1).max().unwrap_or(0)
    }

    pub fn group_count(&self, s: GroupLabel) -> usize {
        self.s.iter().filter(|&&g| g == s).count()
    }

    /// Checks every `z` against `z_domain`, every present `e` against
    /// `e_domain`, and every label against `groups`.
    pub fn validate(&self, e_domain: &Domain, z_domain: &Domain, groups: usize) -> Result<(), TypeError> {
        for (row, (&s, &z)) in self.s.iter().zip(&self.z).enumerate() {
            if s.0 >= groups {
                return Err(TypeError::GroupOutOfRange(s.0, groups));
            }
            if !z_domain.contains(z) {
                return Err(TypeError::ValueOutOfDomain { row, column: "z", value: z });
            }
        }
        if let Some(e) = &self.e {
            for (row, value) in e.iter().enumerate() {
                if let Some(v) = *value {
                    if !e_domain.contains(v) {
                        return Err(TypeError::ValueOutOfDomain { row, column: "e", value: v });
                    }
                }
            }
        }
        Ok(())
    }

    /// Copy with the truth columns (`e`, `y`) and derived columns removed.
    pub fn observations_only(&self) -> SampleTable {
        SampleTable { s: self.s.clone(), z: self.z.clone(), ..Default::default() }
    }

    /// Copy with only the derived columns removed.
    pub fn without_derived(&self) -> SampleTable {
        SampleTable { s: self.s.clone(), z: self.z.clone(), e: self.e.clone(), y: self.y.clone(), ..Default::default() }
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SampleTable {
        fn pick<T: Clone>(col: &Option<Vec<Option<T>>>, idx: &[usize]) -> Option<Vec<Option<T>>> {
            normalize(col.as_ref().map(|c| idx.iter().map(|&i| c[i].clone()).collect()))
        }
        SampleTable {
            s: indices.iter().map(|&i| self.s[i]).collect(),
            z: indices.iter().map(|&i| self.z[i]).collect(),
            e: pick(&self.e, indices),
            y: pick(&self.y, indices),
            e_hat: pick(&self.e_hat, indices),
            y_hat: pick(&self.y_hat, indices),
            method_used: pick(&self.method_used, indices),
            abstained: pick(&self.abstained, indices),
        }
    }
}

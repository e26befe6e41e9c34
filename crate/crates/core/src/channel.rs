//! Estimating the bias channel `P[Z|E,S]` and the observed frequencies
//! `φ_s[z]` from sample tables, plus invertibility diagnostics.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::types::{Channel, Domain, GroupLabel, GroupedDistribution, ProbVector, SampleTable, TypeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("sample table is empty")]
    EmptyTable,
    #[error("group {0} has no rows")]
    EmptyGroup(GroupLabel),
    #[error("source table has no e column (row {0} missing e)")]
    MissingE(usize),
    #[error("smoothing must be finite and non-negative, got {0}")]
    BadSmoothing(f64),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// A `(s, e)` row that had no source observations and was filled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroRowWarning {
    pub group: GroupLabel,
    pub e: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub channel: Channel,
    pub warnings: Vec<ZeroRowWarning>,
}

/// Conditional frequency table `P[Z=z|E=e,S=s]` with additive smoothing.
///
/// Entry `(s,e,z)` is `(n(s,e,z) + smoothing) / (n(s,e) + smoothing·|Z|)`.
/// Rows with no observations and zero smoothing become uniform and are
/// listed in [`ChannelEstimate::warnings`].
pub fn estimate_channel(
    source: &SampleTable,
    e_domain: &Domain,
    z_domain: &Domain,
    groups: usize,
    smoothing: f64,
) -> Result<ChannelEstimate, ChannelError> {
    if !(smoothing.is_finite() && smoothing >= 0.0) {
        return Err(ChannelError::BadSmoothing(smoothing));
    }
    if source.is_empty() {
        return Err(ChannelError::EmptyTable);
    }
    let e = source.e().ok_or(ChannelError::MissingE(0))?;
    if let Some(row) = e.iter().position(Option::is_none) {
        return Err(ChannelError::MissingE(row));
    }
    source.validate(e_domain, z_domain, groups)?;

    let (ne, nz) = (e_domain.len(), z_domain.len());
    let mut counts = vec![vec![0u64; ne * nz]; groups];
    let mut group_rows = vec![0usize; groups];
    for ((&s, &z), e) in source.s().iter().zip(source.z()).zip(e) {
        let ei = e_domain.index_of(e.expect("checked above")).expect("validated");
        let zi = z_domain.index_of(z).expect("validated");
        counts[s.0][ei * nz + zi] += 1;
        group_rows[s.0] += 1;
    }
    if let Some(g) = group_rows.iter().position(|&n| n == 0) {
        return Err(ChannelError::EmptyGroup(GroupLabel(g)));
    }

    let mut warnings = Vec::new();
    let mut matrices = Vec::with_capacity(groups);
    for (g, count) in counts.iter().enumerate() {
        let mut m = vec![0.0; ne * nz];
        for ei in 0..ne {
            let row = &count[ei * nz..(ei + 1) * nz];
            let total: u64 = row.iter().sum();
            let out = &mut m[ei * nz..(ei + 1) * nz];
            if total == 0 && smoothing == 0.0 {
                out.fill(1.0 / nz as f64);
                warnings.push(ZeroRowWarning { group: GroupLabel(g), e: e_domain.value(ei) });
                continue;
            }
            let denom = total as f64 + smoothing * nz as f64;
            for (o, &c) in out.iter_mut().zip(row) {
                *o = (c as f64 + smoothing) / denom;
            }
        }
        matrices.push(m);
    }
    let channel = Channel::new(e_domain.clone(), z_domain.clone(), matrices)?;
    Ok(ChannelEstimate { channel, warnings })
}

/// Empirical frequency of each `z` among rows with group `s`.
pub fn empirical_z_given_s(data: &SampleTable, s: GroupLabel, z_domain: &Domain) -> Result<ProbVector, ChannelError> {
    let mut counts = vec![0u64; z_domain.len()];
    let mut total = 0u64;
    for (row, (&g, &z)) in data.s().iter().zip(data.z()).enumerate() {
        if g != s {
            continue;
        }
        let zi = z_domain
            .index_of(z)
            .ok_or(TypeError::ValueOutOfDomain { row, column: "z", value: z })?;
        counts[zi] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(ChannelError::EmptyGroup(s));
    }
    let mass = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(ProbVector::new(z_domain.clone(), mass)?)
}

/// `φ_s` for every group `0..groups`.
pub fn empirical_phi(data: &SampleTable, z_domain: &Domain, groups: usize) -> Result<GroupedDistribution, ChannelError> {
    let per_group = (0..groups)
        .map(|g| empirical_z_given_s(data, GroupLabel(g), z_domain))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroupedDistribution::new(per_group)?)
}

/// Number of rows per group, as fractions of the table.
pub fn group_weights(data: &SampleTable, groups: usize) -> Vec<f64> {
    let mut counts = vec![0usize; groups];
    for s in data.s() {
        if s.0 < groups {
            counts[s.0] += 1;
        }
    }
    let n = data.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDiagnostics {
    pub group: GroupLabel,
    /// Singular values above `1e-10 · σ_max`.
    pub rank: usize,
    pub min_singular_value: f64,
    pub max_singular_value: f64,
}

/// Per-group numerical rank and extreme singular values of the channel matrix.
pub fn channel_diagnostics(c: &Channel) -> Vec<GroupDiagnostics> {
    let (ne, nz) = (c.e_domain().len(), c.z_domain().len());
    (0..c.num_groups())
        .map(|g| {
            let group = GroupLabel(g);
            let m = DMatrix::from_row_slice(ne, nz, c.matrix(group));
            let sv = m.singular_values();
            let max = sv.iter().copied().fold(0.0_f64, f64::max);
            let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
            let rank = sv.iter().filter(|&&x| x > 1e-10 * max).count();
            GroupDiagnostics { group, rank, min_singular_value: min, max_singular_value: max }
        })
        .collect()
}

//! Bayes inversion to `P̂[E|Z,S]` and the two label-repair rules.
//!
//! The posterior depends on a sample only through `(z, s)`, so
//! [`preprocess`] computes it once per distinct pair and reuses it.

use std::collections::HashMap;

use thiserror::Error;

use crate::types::{
    Channel, DecisionMethod, DecisionThreshold, GroupLabel, GroupedDistribution, ProbVector, SampleTable, TypeError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecoderError {
    #[error("z={0} is outside the channel's Z domain")]
    UnknownZ(i64),
    #[error("group {0} is not covered by the channel")]
    UnknownGroup(GroupLabel),
    #[error("prior and channel do not share an E domain")]
    DomainMismatch,
    #[error("z={z} has zero evidence in group {s} under the estimated prior")]
    ZeroEvidence { z: i64, s: GroupLabel },
    #[error("row {row}: {source}")]
    Row { row: usize, source: Box<DecoderError> },
    #[error("mass floor must lie in (0, 1], got {0}")]
    BadMassFloor(f64),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// `P̂[E | Z=z, S=s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub z: i64,
    pub s: GroupLabel,
    pub dist: ProbVector,
}

pub fn posterior(channel: &Channel, prior: &GroupedDistribution, z: i64, s: GroupLabel) -> Result<Posterior, DecoderError> {
    let (dist, _) = posterior_with_evidence(channel, prior, z, s)?;
    Ok(Posterior { z, s, dist })
}

/// Posterior along with its evidence `P[z|s] = Σ_e P[z|e,s]·prior[e|s]`.
pub fn posterior_with_evidence(
    channel: &Channel,
    prior: &GroupedDistribution,
    z: i64,
    s: GroupLabel,
) -> Result<(ProbVector, f64), DecoderError> {
    if prior.domain() != channel.e_domain() {
        return Err(DecoderError::DomainMismatch);
    }
    if s.0 >= channel.num_groups() || s.0 >= prior.num_groups() {
        return Err(DecoderError::UnknownGroup(s));
    }
    let zi = channel.z_domain().index_of(z).ok_or(DecoderError::UnknownZ(z))?;
    let mut joint: Vec<f64> = prior
        .group(s)
        .mass()
        .iter()
        .enumerate()
        .map(|(ei, &p)| channel.prob(s, ei, zi) * p)
        .collect();
    let evidence: f64 = joint.iter().sum();
    if evidence <= 0.0 {
        return Err(DecoderError::ZeroEvidence { z, s });
    }
    for j in &mut joint {
        *j /= evidence;
    }
    Ok((ProbVector::new(channel.e_domain().clone(), joint)?, evidence))
}

/// Result of the modal rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeEstimate {
    /// Mode carries at least the mass floor. `tie` is set when several
    /// values share the maximal mass; the smallest is returned.
    Estimate { e_hat: i64, mass: f64, tie: bool },
    Abstain { max_mass: f64 },
}

impl ModeEstimate {
    pub fn e_hat(&self) -> Option<i64> {
        match *self {
            ModeEstimate::Estimate { e_hat, .. } => Some(e_hat),
            ModeEstimate::Abstain { .. } => None,
        }
    }
}

/// Method 1: the posterior mode, provided it carries at least `mass_floor`.
pub fn method1_estimate(p: &Posterior, mass_floor: f64) -> ModeEstimate {
    let mass = p.dist.mass();
    let mut best = 0;
    for (i, &m) in mass.iter().enumerate() {
        if m > mass[best] {
            best = i;
        }
    }
    let max_mass = mass[best];
    if max_mass < mass_floor {
        return ModeEstimate::Abstain { max_mass };
    }
    let tie = mass.iter().filter(|&&m| m == max_mass).count() > 1;
    ModeEstimate::Estimate { e_hat: p.dist.domain().value(best), mass: max_mass, tie }
}

pub fn method1_decision(e_hat: i64, thr: &DecisionThreshold) -> u8 {
    thr.decide(e_hat)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassDecision {
    pub y_hat: u8,
    /// Posterior mass outside the positive region.
    pub sigma0: f64,
    /// Posterior mass inside the positive region.
    pub sigma1: f64,
}

/// Method 2: positive iff the positive region carries strictly more mass.
pub fn method2_decision(p: &Posterior, thr: &DecisionThreshold) -> MassDecision {
    let (mut sigma0, mut sigma1) = (0.0, 0.0);
    for (&e, &m) in p.dist.domain().values().iter().zip(p.dist.mass()) {
        if thr.is_positive(e) {
            sigma1 += m;
        } else {
            sigma0 += m;
        }
    }
    MassDecision { y_hat: u8::from(sigma0 < sigma1), sigma0, sigma1 }
}

/// Number of strict local maxima (plateaus count once) with positive mass.
pub fn mode_count(dist: &ProbVector) -> usize {
    let m = dist.mass();
    let mut count = 0;
    let mut i = 0;
    while i < m.len() {
        let mut j = i;
        while j + 1 < m.len() && m[j + 1] == m[i] {
            j += 1;
        }
        let left = if i == 0 { f64::NEG_INFINITY } else { m[i - 1] };
        let right = if j + 1 == m.len() { f64::NEG_INFINITY } else { m[j + 1] };
        if m[i] > 0.0 && m[i] > left && m[i] > right {
            count += 1;
        }
        i = j + 1;
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessSummary {
    pub rows: usize,
    /// Fraction of rows whose posterior clears the mass floor.
    pub applicability_fraction: f64,
    pub abstained_rows: usize,
    pub tie_rows: usize,
    /// Rows whose posterior has more than one local maximum.
    pub multimodal_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub table: SampleTable,
    pub summary: PreprocessSummary,
}

struct CachedDecision {
    mode: ModeEstimate,
    mass: MassDecision,
    modes: usize,
}

fn decision_cache(
    data: &SampleTable,
    channel: &Channel,
    prior: &GroupedDistribution,
    thr: &DecisionThreshold,
    mass_floor: f64,
) -> Result<HashMap<(GroupLabel, i64), CachedDecision>, DecoderError> {
    if !(mass_floor > 0.0 && mass_floor <= 1.0) {
        return Err(DecoderError::BadMassFloor(mass_floor));
    }
    let mut cache = HashMap::new();
    for (row, (&s, &z)) in data.s().iter().zip(data.z()).enumerate() {
        if cache.contains_key(&(s, z)) {
            continue;
        }
        let p = posterior(channel, prior, z, s).map_err(|e| DecoderError::Row { row, source: Box::new(e) })?;
        let entry = CachedDecision {
            mode: method1_estimate(&p, mass_floor),
            mass: method2_decision(&p, thr),
            modes: mode_count(&p.dist),
        };
        cache.insert((s, z), entry);
    }
    Ok(cache)
}

/// Fraction of rows for which Method 1 does not abstain.
pub fn method1_applicability(
    data: &SampleTable,
    channel: &Channel,
    prior: &GroupedDistribution,
    mass_floor: f64,
) -> Result<f64, DecoderError> {
    let thr = DecisionThreshold::new(channel.e_domain().min(), false);
    let cache = decision_cache(data, channel, prior, &thr, mass_floor)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let ok = data
        .s()
        .iter()
        .zip(data.z())
        .filter(|(&s, &z)| matches!(cache[&(s, z)].mode, ModeEstimate::Estimate { .. }))
        .count();
    Ok(ok as f64 / data.len() as f64)
}

/// Labels every row of `data` with `e_hat`/`y_hat`.
///
/// Under [`DecisionMethod::Mode`], rows whose posterior does not clear the
/// mass floor fall back to the threshold-mass rule for `y_hat` and keep an
/// empty `e_hat`. Row order is preserved; truth columns pass through.
pub fn preprocess(
    data: &SampleTable,
    channel: &Channel,
    prior: &GroupedDistribution,
    thr: &DecisionThreshold,
    method: DecisionMethod,
    mass_floor: f64,
) -> Result<Preprocessed, DecoderError> {
    let cache = decision_cache(data, channel, prior, thr, mass_floor)?;
    let n = data.len();
    let mut e_hat = Vec::with_capacity(n);
    let mut y_hat = Vec::with_capacity(n);
    let mut used = Vec::with_capacity(n);
    let mut abstained = Vec::with_capacity(n);
    let mut summary = PreprocessSummary {
        rows: n,
        applicability_fraction: 0.0,
        abstained_rows: 0,
        tie_rows: 0,
        multimodal_rows: 0,
    };
    let mut applicable = 0usize;

    for (&s, &z) in data.s().iter().zip(data.z()) {
        let d = &cache[&(s, z)];
        if d.modes > 1 {
            summary.multimodal_rows += 1;
        }
        if let ModeEstimate::Estimate { tie, .. } = d.mode {
            applicable += 1;
            if tie {
                summary.tie_rows += 1;
            }
        }
        match (method, d.mode) {
            (DecisionMethod::Mode, ModeEstimate::Estimate { e_hat: e, .. }) => {
                e_hat.push(Some(e));
                y_hat.push(Some(method1_decision(e, thr)));
                used.push(Some(DecisionMethod::Mode));
                abstained.push(Some(false));
            }
            (DecisionMethod::Mode, ModeEstimate::Abstain { .. }) => {
                summary.abstained_rows += 1;
                e_hat.push(None);
                y_hat.push(Some(d.mass.y_hat));
                used.push(Some(DecisionMethod::Mass));
                abstained.push(Some(true));
            }
            (DecisionMethod::Mass, _) => {
                e_hat.push(None);
                y_hat.push(Some(d.mass.y_hat));
                used.push(Some(DecisionMethod::Mass));
                abstained.push(None);
            }
        }
    }
    summary.applicability_fraction = if n == 0 { 0.0 } else { applicable as f64 / n as f64 };

    let table = data
        .without_derived()
        .with_e_hat(Some(e_hat))?
        .with_y_hat(Some(y_hat))?
        .with_method_used(Some(used))?
        .with_abstained(Some(abstained))?;
    Ok(Preprocessed { table, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Domain;

    fn d(n: i64) -> Domain {
        Domain::range(0, n - 1).unwrap()
    }

    fn post(values: Vec<i64>, mass: Vec<f64>) -> Posterior {
        Posterior { z: 0, s: GroupLabel(0), dist: ProbVector::new(Domain::new(values).unwrap(), mass).unwrap() }
    }

    fn two_by_two() -> Channel {
        Channel::shared(d(2), d(2), vec![0.8, 0.2, 0.3, 0.7], 1).unwrap()
    }

    fn prior1(mass: Vec<f64>) -> GroupedDistribution {
        let n = mass.len() as i64;
        GroupedDistribution::new(vec![ProbVector::new(d(n), mass).unwrap()]).unwrap()
    }

    #[test]
    fn posterior_examples() {
        let prior = prior1(vec![0.1, 0.2, 0.3, 0.4]);
        let p = posterior(&Channel::identity(d(4), 1), &prior, 2, GroupLabel(0)).unwrap();
        assert_eq!(p.dist.mass(), &[0.0, 0.0, 1.0, 0.0]);

        let flat = Channel::shared(d(4), d(3), vec![1.0 / 3.0; 12], 1).unwrap();
        let p = posterior(&flat, &prior, 1, GroupLabel(0)).unwrap();
        for (a, b) in p.dist.mass().iter().zip(prior.groups()[0].mass()) {
            assert!((a - b).abs() < 1e-15);
        }

        let p = posterior(&two_by_two(), &prior1(vec![0.5, 0.5]), 0, GroupLabel(0)).unwrap();
        assert!((p.dist.mass()[0] - 0.8 / 1.1).abs() < 1e-15);
        assert!((p.dist.mass()[1] - 0.3 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn posterior_errors() {
        let id = Channel::identity(d(2), 1);
        let prior = prior1(vec![1.0, 0.0]);
        assert_eq!(
            posterior(&id, &prior, 1, GroupLabel(0)),
            Err(DecoderError::ZeroEvidence { z: 1, s: GroupLabel(0) })
        );
        assert_eq!(posterior(&id, &prior, 7, GroupLabel(0)), Err(DecoderError::UnknownZ(7)));
        assert_eq!(posterior(&id, &prior, 0, GroupLabel(1)), Err(DecoderError::UnknownGroup(GroupLabel(1))));
    }

    #[test]
    fn method1_rules() {
        let p = post(vec![0, 1, 2], vec![0.6, 0.3, 0.1]);
        assert_eq!(method1_estimate(&p, 0.5).e_hat(), Some(0));

        let p = post(vec![0, 1, 2], vec![0.4, 0.35, 0.25]);
        assert_eq!(method1_estimate(&p, 0.5), ModeEstimate::Abstain { max_mass: 0.4 });

        let p = post(vec![3, 7], vec![0.5, 0.5]);
        assert_eq!(method1_estimate(&p, 0.5), ModeEstimate::Estimate { e_hat: 3, mass: 0.5, tie: true });
    }

    #[test]
    fn method1_thresholds() {
        assert_eq!(method1_decision(80, &DecisionThreshold::new(80, false)), 1);
        assert_eq!(method1_decision(80, &DecisionThreshold::new(80, true)), 0);
        assert_eq!(method1_decision(0, &DecisionThreshold::new(80, true)), 0);
        assert_eq!(method1_decision(0, &DecisionThreshold::new(80, false)), 0);
    }

    #[test]
    fn method2_rules() {
        let thr = DecisionThreshold::new(80, false);
        let r = method2_decision(&post(vec![70, 80, 90], vec![0.2, 0.3, 0.5]), &thr);
        assert_eq!(r.y_hat, 1);
        assert!((r.sigma0 - 0.2).abs() < 1e-15 && (r.sigma1 - 0.8).abs() < 1e-15);

        let r = method2_decision(&post(vec![70, 80, 90], vec![0.5, 0.25, 0.25]), &thr);
        assert_eq!((r.y_hat, r.sigma0, r.sigma1), (0, 0.5, 0.5));

        let r = method2_decision(&post(vec![70, 80, 90], vec![0.0, 0.0, 1.0]), &thr);
        assert_eq!(r.y_hat, 1);

        // strict moves the boundary value into the negative region
        let r = method2_decision(&post(vec![70, 80, 90], vec![0.2, 0.3, 0.5]), &DecisionThreshold::new(80, true));
        assert_eq!(r.y_hat, 0);
    }

    #[test]
    fn modes() {
        let dom = d(5);
        let pv = |m: Vec<f64>| ProbVector::new(dom.clone(), m).unwrap();
        assert_eq!(mode_count(&pv(vec![0.1, 0.6, 0.1, 0.1, 0.1])), 1);
        assert_eq!(mode_count(&pv(vec![0.4, 0.1, 0.0, 0.1, 0.4])), 2);
        assert_eq!(mode_count(&pv(vec![0.0, 0.3, 0.3, 0.2, 0.2])), 1);
        assert_eq!(mode_count(&pv(vec![0.2; 5])), 1);
    }

    #[test]
    fn preprocess_identity_mode() {
        let dom = d(4);
        let t = SampleTable::new(vec![GroupLabel(0), GroupLabel(1), GroupLabel(0)], vec![3, 1, 0]).unwrap();
        let prior = GroupedDistribution::new(vec![ProbVector::uniform(dom.clone()), ProbVector::uniform(dom.clone())])
            .unwrap();
        let out = preprocess(
            &t,
            &Channel::identity(dom, 2),
            &prior,
            &DecisionThreshold::new(2, false),
            DecisionMethod::Mode,
            0.5,
        )
        .unwrap();
        assert_eq!(out.table.e_hat().unwrap(), &[Some(3), Some(1), Some(0)]);
        assert_eq!(out.table.y_hat().unwrap(), &[Some(1), Some(0), Some(0)]);
        assert_eq!(out.summary.applicability_fraction, 1.0);
    }

    #[test]
    fn preprocess_uninformative_mass() {
        let dom = d(3);
        let flat = Channel::uniform(dom.clone(), dom.clone(), 2);
        let prior = GroupedDistribution::new(vec![
            ProbVector::new(dom.clone(), vec![0.5, 0.3, 0.2]).unwrap(),
            ProbVector::new(dom.clone(), vec![0.05, 0.05, 0.9]).unwrap(),
        ])
        .unwrap();
        let t = SampleTable::new(vec![GroupLabel(1), GroupLabel(1), GroupLabel(0)], vec![0, 2, 1]).unwrap();
        let out = preprocess(&t, &flat, &prior, &DecisionThreshold::new(1, true), DecisionMethod::Mass, 0.5).unwrap();
        assert_eq!(out.table.y_hat().unwrap(), &[Some(1), Some(1), Some(0)]);
        assert!(out.table.e_hat().is_none());
    }

    #[test]
    fn preprocess_hand_bayes_rows() {
        // posteriors at prior [0.5,0.5]: z=0 → [8/11, 3/11], z=1 → [2/9, 7/9]
        let t = SampleTable::new(vec![GroupLabel(0); 3], vec![0, 1, 0]).unwrap();
        let out = preprocess(
            &t,
            &two_by_two(),
            &prior1(vec![0.5, 0.5]),
            &DecisionThreshold::new(1, false),
            DecisionMethod::Mode,
            0.5,
        )
        .unwrap();
        assert_eq!(out.table.e_hat().unwrap(), &[Some(0), Some(1), Some(0)]);
        assert_eq!(out.table.y_hat().unwrap(), &[Some(0), Some(1), Some(0)]);

        // raising the floor above 8/11 makes z=0 abstain; Method 2 still says 0
        let out = preprocess(
            &t,
            &two_by_two(),
            &prior1(vec![0.5, 0.5]),
            &DecisionThreshold::new(1, false),
            DecisionMethod::Mode,
            0.75,
        )
        .unwrap();
        assert_eq!(out.table.e_hat().unwrap(), &[None, Some(1), None]);
        assert_eq!(out.table.y_hat().unwrap(), &[Some(0), Some(1), Some(0)]);
        assert_eq!(out.table.abstained().unwrap(), &[Some(true), Some(false), Some(true)]);
        assert_eq!(out.summary.abstained_rows, 2);
    }

    #[test]
    fn preprocess_error_carries_row() {
        let t = SampleTable::new(vec![GroupLabel(0); 2], vec![0, 1]).unwrap();
        let err = preprocess(
            &t,
            &Channel::identity(d(2), 1),
            &prior1(vec![1.0, 0.0]),
            &DecisionThreshold::new(1, false),
            DecisionMethod::Mode,
            0.5,
        )
        .unwrap_err();
        assert!(matches!(err, DecoderError::Row { row: 1, .. }), "{err:?}");
    }
}

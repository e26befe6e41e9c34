use babe::estimator::{babe_estimate, estimate_from, EmConfig};
use babe::metrics::{accuracy, cspd, distortion, eod, spd, wasserstein_1d, wasserstein_lp_oracle};
use babe::types::{validate_channel, Channel, Domain, GroupLabel, GroupedDistribution, ProbVector};
use proptest::collection::vec;
use proptest::prelude::*;

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Sorted distinct integer support of size 1..=max.
fn domain(max: usize) -> impl Strategy<Value = Domain> {
    proptest::collection::btree_set(-50i64..50, 1..=max).prop_map(|s| Domain::new(s.into_iter().collect()).unwrap())
}

fn dist_on(d: Domain) -> impl Strategy<Value = ProbVector> {
    let n = d.len();
    vec(prop_oneof![1 => Just(0.0), 4 => 0.0f64..1.0], n)
        .prop_filter("positive total", |v| v.iter().sum::<f64>() > 1e-3)
        .prop_map(move |v| ProbVector::new(d.clone(), normalized(v)).unwrap())
}

fn pair(max: usize) -> impl Strategy<Value = (ProbVector, ProbVector)> {
    domain(max).prop_flat_map(|d| (dist_on(d.clone()), dist_on(d)))
}

fn triple(max: usize) -> impl Strategy<Value = (ProbVector, ProbVector, ProbVector)> {
    domain(max).prop_flat_map(|d| (dist_on(d.clone()), dist_on(d.clone()), dist_on(d)))
}

/// Channel with `ne` rows, `nz` columns; `dup` copies row 0 into row 1 to force rank deficiency.
fn channel(ne: usize, nz: usize, dup: bool) -> impl Strategy<Value = Channel> {
    vec(vec(0.01f64..1.0, nz), ne).prop_map(move |mut rows| {
        if dup && ne > 1 {
            rows[1] = rows[0].clone();
        }
        let m: Vec<f64> = rows.into_iter().flat_map(normalized).collect();
        Channel::shared(Domain::range(0, ne as i64 - 1).unwrap(), Domain::range(0, nz as i64 - 1).unwrap(), m, 1)
            .unwrap()
    })
}

fn em_instance() -> impl Strategy<Value = (Channel, ProbVector)> {
    (1usize..=10, 1usize..=10, any::<bool>()).prop_flat_map(|(ne, nz, dup)| {
        (channel(ne, nz, dup), dist_on(Domain::range(0, nz as i64 - 1).unwrap()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn wasserstein_matches_coupling_oracle((mu, nu) in pair(20)) {
        let w = wasserstein_1d(&mu, &nu).unwrap();
        let lp = wasserstein_lp_oracle(&mu, &nu).unwrap();
        prop_assert!((w - lp).abs() <= 1e-9, "closed form {w} vs oracle {lp}");
    }

    #[test]
    fn wasserstein_is_a_metric((a, b, c) in triple(20)) {
        let ab = wasserstein_1d(&a, &b).unwrap();
        let ba = wasserstein_1d(&b, &a).unwrap();
        let bc = wasserstein_1d(&b, &c).unwrap();
        let ac = wasserstein_1d(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        let max_gap = a.mass().iter().zip(b.mass()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if max_gap > 1e-6 {
            prop_assert!(ab > 0.0);
        }
    }

    #[test]
    fn em_likelihood_never_decreases((c, phi) in em_instance()) {
        let cfg = EmConfig { max_iterations: 200, gamma: 1e-12, record_trace: true, ..Default::default() };
        let phi = GroupedDistribution::new(vec![phi]).unwrap();
        let res = babe_estimate(&c, &phi, &cfg).unwrap();
        let trace = &res.likelihood_trace.unwrap()[0];
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
        }
        let est = res.estimate.group(GroupLabel(0));
        prop_assert!((est.mass().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(est.mass().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn identity_channel_returns_phi(phi in domain(30).prop_flat_map(dist_on)) {
        let dom = phi.domain().clone();
        let c = Channel::identity(dom, 1);
        let phi = GroupedDistribution::new(vec![phi]).unwrap();
        let res = babe_estimate(&c, &phi, &EmConfig::default()).unwrap();
        for (a, b) in res.estimate.group(GroupLabel(0)).mass().iter().zip(phi.group(GroupLabel(0)).mass()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn converged_estimate_is_a_fixed_point((c, phi) in em_instance()) {
        let phi = GroupedDistribution::new(vec![phi]).unwrap();
        let cfg = EmConfig { gamma: 1e-9, max_iterations: 100_000, ..Default::default() };
        let first = babe_estimate(&c, &phi, &cfg).unwrap();
        prop_assume!(first.converged[0]);
        let again = estimate_from(&c, &phi, &first.estimate, &EmConfig { gamma: 1e-9, max_iterations: 1, ..Default::default() }).unwrap();
        for (a, b) in first.estimate.group(GroupLabel(0)).mass().iter().zip(again.estimate.group(GroupLabel(0)).mass()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn random_channels_validate(c in (1usize..=6, 1usize..=6, any::<bool>()).prop_flat_map(|(a, b, d)| channel(a, b, d))) {
        prop_assert!(validate_channel(&c).is_ok());
    }
}

fn labels() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<GroupLabel>, Vec<i64>)> {
    (2usize..60).prop_flat_map(|n| {
        (vec(0u8..2, n), vec(0u8..2, n), vec(0usize..2, n), vec(0i64..5, n)).prop_map(|(a, b, s, e)| {
            let mut s: Vec<GroupLabel> = s.into_iter().map(GroupLabel).collect();
            // both groups present
            s[0] = GroupLabel(0);
            s[1] = GroupLabel(1);
            (a, b, s, e)
        })
    })
}

fn flip(s: &[GroupLabel]) -> Vec<GroupLabel> {
    s.iter().map(|g| GroupLabel(1 - g.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn group_relabeling_flips_sign((y_hat, y, s, _e) in labels()) {
        let a = spd(&y_hat, &s).unwrap();
        let b = spd(&y_hat, &flip(&s)).unwrap();
        prop_assert!((a + b).abs() < 1e-12);
        if let (Ok(x), Ok(z)) = (eod(&y_hat, &y, &s), eod(&y_hat, &y, &flip(&s))) {
            prop_assert!((x.difference + z.difference).abs() < 1e-12);
        }
    }

    #[test]
    fn group_blind_decisions_have_zero_cspd((_, _, s, e) in labels()) {
        let y_hat: Vec<u8> = e.iter().map(|&v| u8::from(v >= 3)).collect();
        let c = cspd(&y_hat, &s, &e).unwrap();
        prop_assert!(c.per_e.values().flatten().all(|&d| d == 0.0));
        prop_assert_eq!(c.mean_abs, 0.0);
        // each stratum with both groups then has zero parity difference
        for (&v, d) in &c.per_e {
            if d.is_some() {
                let rows: Vec<usize> = (0..e.len()).filter(|&i| e[i] == v).collect();
                let yh: Vec<u8> = rows.iter().map(|&i| y_hat[i]).collect();
                let ss: Vec<GroupLabel> = rows.iter().map(|&i| s[i]).collect();
                prop_assert_eq!(spd(&yh, &ss).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn accuracy_is_one_minus_hamming((a, b, _, _) in labels()) {
        let hamming = a.iter().zip(&b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64;
        prop_assert!((accuracy(&a, &b).unwrap() - (1.0 - hamming)).abs() < 1e-12);
    }

    #[test]
    fn distortion_zero_iff_identical(a in vec(0i64..100, 1..40), b in vec(0i64..100, 1..40)) {
        let n = a.len().min(b.len());
        let (a, b) = (&a[..n], &b[..n]);
        let d = distortion(a, b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d == 0.0, a == b);
    }
}

use serde::{Deserialize, Serialize};

use super::NumError;

/// Population moments of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation (divides by `n`).
    pub std: f64,
    /// Fisher skewness `m3 / m2^{3/2}`; reported as 0 when `std == 0`.
    pub skewness: f64,
}

/// Mean, population std and population skewness.
pub fn moments(samples: &[f64]) -> Result<MomentStats, NumError> {
    if samples.is_empty() {
        return Err(NumError::Empty);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite);
    }
    let n = samples.len() as f64;
    let rough = samples.iter().sum::<f64>() / n;
    // One correction pass removes the rounding left in the first mean.
    let mean = rough + samples.iter().map(|x| x - rough).sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    for &x in samples {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let std = m2.sqrt();
    let skewness = if std > 0.0 { m3 / (m2 * std) } else { 0.0 };
    Ok(MomentStats {
        count: samples.len(),
        mean,
        std,
        skewness,
    })
}

/// Kendall's τ-b between two score vectors, via Knight's O(n log n) merge sort.
///
/// With no ties this equals `(concordant − discordant) / (n(n−1)/2)`. Fails
/// when either vector is entirely tied, since the tie-corrected denominator
/// is zero there.
pub fn kendall_tau(scores_a: &[f64], scores_b: &[f64]) -> Result<f64, NumError> {
    if scores_a.len() != scores_b.len() {
        return Err(NumError::LengthMismatch(scores_a.len(), scores_b.len()));
    }
    let n = scores_a.len();
    if n < 2 {
        return Err(NumError::TooShort { needed: 2, got: n });
    }
    if scores_a.iter().chain(scores_b).any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite);
    }

    let mut pairs: Vec<(f64, f64)> = scores_a.iter().copied().zip(scores_b.iter().copied()).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let n0 = (n as i64) * (n as i64 - 1) / 2;
    let tied_a = tie_pairs(&pairs, |p, q| p.0 == q.0);
    let tied_joint = tie_pairs(&pairs, |p, q| p.0 == q.0 && p.1 == q.1);

    let mut b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut scratch = vec![0.0; n];
    let swaps = merge_count(&mut b, &mut scratch);

    let tied_b = {
        let mut count = 0i64;
        let mut run = 1i64;
        for w in b.windows(2) {
            if w[0] == w[1] {
                run += 1;
            } else {
                count += run * (run - 1) / 2;
                run = 1;
            }
        }
        count + run * (run - 1) / 2
    };

    if tied_a == n0 || tied_b == n0 {
        return Err(NumError::Degenerate("all values tied in one input"));
    }
    let numerator = n0 - tied_a - tied_b + tied_joint - 2 * swaps;
    let denom = (((n0 - tied_a) as f64) * ((n0 - tied_b) as f64)).sqrt();
    Ok(numerator as f64 / denom)
}

/// Number of tied pairs among runs of adjacent equal elements of a sorted slice.
fn tie_pairs(sorted: &[(f64, f64)], same: impl Fn(&(f64, f64), &(f64, f64)) -> bool) -> i64 {
    let mut count = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if same(&w[0], &w[1]) {
            run += 1;
        } else {
            count += run * (run - 1) / 2;
            run = 1;
        }
    }
    count + run * (run - 1) / 2
}

/// Stable merge sort ascending; returns the number of strict inversions.
fn merge_count(v: &mut [f64], scratch: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        merge_count(left, sl) + merge_count(right, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            scratch[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            scratch[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    while i < mid {
        scratch[k] = v[i];
        i += 1;
        k += 1;
    }
    while j < n {
        scratch[k] = v[j];
        j += 1;
        k += 1;
    }
    v.copy_from_slice(&scratch[..n]);
    swaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight O(n²) pair counting with τ-b tie correction.
    fn brute_tau(a: &[f64], b: &[f64]) -> Option<f64> {
        let n = a.len();
        let (mut conc, mut disc, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in (i + 1)..n {
                let da = a[i] - a[j];
                let db = b[i] - b[j];
                if da == 0.0 {
                    ta += 1;
                }
                if db == 0.0 {
                    tb += 1;
                }
                if da != 0.0 && db != 0.0 {
                    if (da > 0.0) == (db > 0.0) {
                        conc += 1;
                    } else {
                        disc += 1;
                    }
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as i64;
        if ta == n0 || tb == n0 {
            return None;
        }
        Some((conc - disc) as f64 / (((n0 - ta) as f64) * ((n0 - tb) as f64)).sqrt())
    }

    #[test]
    fn reference_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &[10.0, 20.0, 30.0, 40.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        let t = kendall_tau(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(t, brute_tau(&a, &[1.0, 3.0, 2.0, 4.0]).unwrap());
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn error_paths() {
        assert_eq!(kendall_tau(&[1.0], &[1.0]), Err(NumError::TooShort { needed: 2, got: 1 }));
        assert_eq!(kendall_tau(&[1.0, 2.0], &[1.0]), Err(NumError::LengthMismatch(2, 1)));
        assert!(matches!(
            kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(NumError::Degenerate(_))
        ));
    }

    #[test]
    fn ties_follow_tau_b() {
        let a = [1.0, 1.0, 2.0, 3.0, 3.0];
        let b = [2.0, 1.0, 1.0, 5.0, 4.0];
        let t = kendall_tau(&a, &b).unwrap();
        assert!((t - brute_tau(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn moment_reference_cases() {
        let c = moments(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((c.mean, c.std, c.skewness), (5.0, 0.0, 0.0));
        let s = moments(&[0.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.std - 3f64.sqrt()).abs() < 1e-15);
        // m3 = (3·(−1)³ + 3³)/4 = 6, m2 = 3 → 6 / 3^{1.5}
        assert!((s.skewness - 6.0 / 3f64.powf(1.5)).abs() < 1e-12);
        let sym = moments(&[-1.0, 1.0]).unwrap();
        assert_eq!((sym.mean, sym.std, sym.skewness), (0.0, 1.0, 0.0));
        assert_eq!(moments(&[]), Err(NumError::Empty));
    }

    proptest! {
        #[test]
        fn matches_pair_counting_with_ties(
            raw in prop::collection::vec((0u8..4, 0u8..4), 2..9)
        ) {
            let a: Vec<f64> = raw.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = raw.iter().map(|p| p.1 as f64).collect();
            match (kendall_tau(&a, &b), brute_tau(&a, &b)) {
                (Ok(t), Some(o)) => prop_assert!((t - o).abs() < 1e-12),
                (Err(_), None) => {}
                (got, want) => prop_assert!(false, "{got:?} vs {want:?}"),
            }
        }

        #[test]
        fn antisymmetric_under_reversal(v in prop::collection::vec(-1e3f64..1e3, 2..12)) {
            let a: Vec<f64> = (0..v.len()).map(|i| i as f64).collect();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            if let (Ok(t), Ok(r)) = (kendall_tau(&a, &v), kendall_tau(&a, &neg)) {
                prop_assert_eq!(t, -r);
            }
        }
    }
}

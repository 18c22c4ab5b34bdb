//! Finite dislocation measures and the Φ-calculus.
//!
//! A dislocation measure here is a finite sum of weighted point masses on the
//! simplex of ranked fragment sequences:
//!
//! ```text
//! ν = Σ_i w_i δ_{s_i},   s_i = (s_{i,1} ≥ s_{i,2} ≥ … > 0),   Σ_n s_{i,n} ≤ 1
//! ```
//!
//! For such a measure every quantity used downstream has a closed form:
//!
//! ```text
//! Φ(p)  = Σ_i w_i (1 − Σ_n s_{i,n}^{1+p})
//! Φ'(p) = Σ_i w_i Σ_n (−ln s_{i,n}) s_{i,n}^{1+p}
//! c_p   = Φ(p) / (1 + p)
//! ```
//!
//! The critical exponent `p̄` is the unique root of `(1+p)Φ'(p) = Φ(p)` and the
//! critical speed is `c_p̄ = Φ'(p̄)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::roots::brent;

/// Ordering and mass-sum slack accepted from user input.
pub const SIZE_TOLERANCE: f64 = 1e-12;

/// Left end of the scan window for `p̄`, as an offset from `p = −1`.
const SCAN_OFFSET: f64 = 1e-6;
/// Right end of the scan window for `p̄`.
const SCAN_P_MAX: f64 = 64.0;
const SCAN_POINTS: usize = 512;
/// Required accuracy `|(1+p̄)Φ'(p̄) − Φ(p̄)|` of the critical exponent.
pub const CRITICAL_RESIDUAL_TOL: f64 = 1e-10;

/// Ranked fragment sizes produced by one dislocation.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentVector {
    sizes: Vec<f64>,
}

impl FragmentVector {
    /// Validates and normalises a fragment sequence.
    ///
    /// Inversions of the ordering up to [`SIZE_TOLERANCE`] are re-sorted and a
    /// total mass up to `1 + SIZE_TOLERANCE` is rescaled to exactly one.
    pub fn new(sizes: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidMeasure(format!(
                "a dislocation must produce at least two fragments (got {}); \
                 the measure must satisfy ν(s₂ = 0) = 0",
                sizes.len()
            )));
        }
        if let Some(s) = sizes.iter().find(|s| !s.is_finite() || **s <= 0.0) {
            return Err(Error::InvalidMeasure(format!(
                "fragment sizes must be strictly positive and finite (got {s})"
            )));
        }
        for w in sizes.windows(2) {
            if w[1] > w[0] + SIZE_TOLERANCE {
                return Err(Error::InvalidMeasure(format!(
                    "fragment sizes must be nonincreasing ({} is followed by {})",
                    w[0], w[1]
                )));
            }
        }
        let mut sizes = sizes;
        sizes.sort_by(|a, b| b.total_cmp(a));

        let total: f64 = sizes.iter().sum();
        if total > 1.0 + SIZE_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "fragment sizes sum to {total} > 1"
            )));
        }
        if total > 1.0 {
            sizes.iter_mut().for_each(|s| *s /= total);
        }
        if sizes[0] >= 1.0 {
            return Err(Error::InvalidMeasure(
                "the largest fragment must be smaller than 1; \
                 the measure must satisfy ν({(1, 0, …)}) = 0"
                    .into(),
            ));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Total retained mass `Σ s_n`.
    pub fn mass(&self) -> f64 {
        self.sizes.iter().sum()
    }

    /// `Σ s_n^{1+p}`
    fn power_sum(&self, p: f64) -> f64 {
        self.sizes.iter().map(|s| s.powf(1.0 + p)).sum()
    }

    /// `Σ (−ln s_n) s_n^{1+p}`
    fn log_power_sum(&self, p: f64) -> f64 {
        self.sizes.iter().map(|s| -s.ln() * s.powf(1.0 + p)).sum()
    }
}

/// A weighted point mass of a dislocation measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub fragments: FragmentVector,
}

/// Finite atomic dislocation measure.
#[derive(Debug, Clone, PartialEq)]
pub struct DislocationMeasure {
    atoms: Vec<Atom>,
    cumulative: Vec<f64>,
}

impl DislocationMeasure {
    /// Builds a measure from `(weight, fragments)` pairs.
    ///
    /// Fails when a weight is not strictly positive, when there are no atoms,
    /// or when `(1+p)Φ'(p) > Φ(p)` holds nowhere on the scan window.
    pub fn new(atoms: Vec<(f64, FragmentVector)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("the measure has no atoms".into()));
        }
        let mut cumulative = Vec::with_capacity(atoms.len());
        let mut acc = 0.0;
        for (i, (w, _)) in atoms.iter().enumerate() {
            if !w.is_finite() || *w <= 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "atom {i}: weight must be positive and finite (got {w})"
                )));
            }
            acc += w;
            cumulative.push(acc);
        }
        let measure = Self {
            atoms: atoms
                .into_iter()
                .map(|(weight, fragments)| Atom { weight, fragments })
                .collect(),
            cumulative,
        };
        if !measure.bertoin_condition_holds() {
            return Err(Error::InvalidMeasure(
                "(1+p)Φ'(p) > Φ(p) fails for every p in the scan window".into(),
            ));
        }
        Ok(measure)
    }

    /// Convenience constructor for a single atom.
    pub fn single(weight: f64, sizes: &[f64]) -> Result<Self> {
        Self::new(vec![(weight, FragmentVector::new(sizes.to_vec())?)])
    }

    /// The same measure with every weight multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.atoms
                .iter()
                .map(|a| (a.weight * factor, a.fragments.clone()))
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Total mass `ν(𝒮) = Σ w_i`, the rate at which every block fragments.
    pub fn total_rate(&self) -> f64 {
        *self.cumulative.last().expect("nonempty measure")
    }

    /// Φ(p) for `p > −1`.
    pub fn phi(&self, p: f64) -> Result<f64> {
        check_exponent(p)?;
        Ok(self.phi_unchecked(p))
    }

    /// Φ'(p) for `p > −1`.
    pub fn phi_prime(&self, p: f64) -> Result<f64> {
        check_exponent(p)?;
        Ok(self.phi_prime_unchecked(p))
    }

    /// `c_p = Φ(p) / (1 + p)` for `p > −1`.
    pub fn c_of_p(&self, p: f64) -> Result<f64> {
        check_exponent(p)?;
        Ok(self.phi_unchecked(p) / (1.0 + p))
    }

    /// `lim_{p↓−1} Φ(p) = Σ_i w_i (1 − #fragments_i)`.
    pub fn phi_lower_limit(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * (1.0 - a.fragments.len() as f64))
            .sum()
    }

    /// Killing rate of the tagged fragment, `Σ_i w_i (1 − Σ_n s_{i,n})`.
    pub fn killing_rate(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * (1.0 - a.fragments.mass()))
            .sum()
    }

    pub fn is_conservative(&self) -> bool {
        self.atoms
            .iter()
            .all(|a| (1.0 - a.fragments.mass()).abs() <= SIZE_TOLERANCE)
    }

    /// Whether `(1+p)Φ'(p) > Φ(p)` for some `p` of the geometric scan grid.
    pub fn bertoin_condition_holds(&self) -> bool {
        scan_grid().any(|p| self.critical_gap(p) > 0.0)
    }

    /// The critical exponent `p̄`.
    pub fn critical_exponent(&self) -> Result<f64> {
        let grid: Vec<f64> = scan_grid().collect();
        let values: Vec<f64> = grid.iter().map(|&p| self.critical_gap(p)).collect();
        let idx = values
            .windows(2)
            .position(|w| w[0] > 0.0 && w[1] <= 0.0)
            .ok_or_else(|| {
                Error::NotBracketed(format!(
                    "(1+p)Φ'(p) − Φ(p) has no sign change on (−1 + {SCAN_OFFSET}, {SCAN_P_MAX}]"
                ))
            })?;
        if values[idx + 1] == 0.0 {
            return Ok(grid[idx + 1]);
        }
        let root = brent(
            |p| self.critical_gap(p),
            grid[idx],
            grid[idx + 1],
            1e-15,
            0.0,
            200,
        )
        .ok_or_else(|| Error::NotBracketed("Brent lost the bracket".into()))?;
        let gap = self.critical_gap(root);
        if gap.abs() >= CRITICAL_RESIDUAL_TOL * self.total_rate().max(1.0) {
            return Err(Error::NotBracketed(format!(
                "root refinement stalled with |g(p̄)| = {gap:e}"
            )));
        }
        Ok(root)
    }

    /// The critical speed `c_p̄ = Φ'(p̄)`.
    pub fn critical_speed(&self) -> Result<f64> {
        let p = self.critical_exponent()?;
        Ok(self.phi_prime_unchecked(p))
    }

    /// Draws an atom index with probability `w_i / ν(𝒮)`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.atoms.len() == 1 {
            return 0;
        }
        let u = rng.random::<f64>() * self.total_rate();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.atoms.len() - 1)
    }

    /// Draws the fragment vector of one dislocation.
    pub fn sample_fragments<R: Rng + ?Sized>(&self, rng: &mut R) -> &FragmentVector {
        &self.atoms[self.sample_index(rng)].fragments
    }

    /// `g(p) = (1+p)Φ'(p) − Φ(p)`; strictly decreasing since Φ is concave.
    pub(crate) fn critical_gap(&self, p: f64) -> f64 {
        (1.0 + p) * self.phi_prime_unchecked(p) - self.phi_unchecked(p)
    }

    pub(crate) fn phi_unchecked(&self, p: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * (1.0 - a.fragments.power_sum(p)))
            .sum()
    }

    pub(crate) fn phi_prime_unchecked(&self, p: f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * a.fragments.log_power_sum(p))
            .sum()
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > -1.0 {
        Ok(())
    } else {
        Err(Error::param("p", format!("must satisfy p > −1 (got {p})")))
    }
}

/// Geometric grid in `1 + p` over `[SCAN_OFFSET, 1 + SCAN_P_MAX]`.
fn scan_grid() -> impl Iterator<Item = f64> {
    let lo = SCAN_OFFSET.ln();
    let hi = (1.0 + SCAN_P_MAX).ln();
    (0..SCAN_POINTS).map(move |k| {
        let t = k as f64 / (SCAN_POINTS - 1) as f64;
        if k + 1 == SCAN_POINTS {
            SCAN_P_MAX
        } else {
            (lo + t * (hi - lo)).exp() - 1.0
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::trial_rng;

    fn binary() -> DislocationMeasure {
        DislocationMeasure::single(1.0, &[0.5, 0.5]).unwrap()
    }

    fn lossy() -> DislocationMeasure {
        DislocationMeasure::single(1.0, &[0.5, 0.25]).unwrap()
    }

    #[test]
    fn total_rate_sums_weights() {
        assert_eq!(binary().total_rate(), 1.0);
        assert_eq!(
            DislocationMeasure::single(2.0, &[0.5, 0.5])
                .unwrap()
                .total_rate(),
            2.0
        );
        let two = DislocationMeasure::new(vec![
            (1.0, FragmentVector::new(vec![0.5, 0.5]).unwrap()),
            (0.5, FragmentVector::new(vec![0.5, 0.25]).unwrap()),
        ])
        .unwrap();
        assert_eq!(two.total_rate(), 1.5);
    }

    #[test]
    fn phi_closed_forms() {
        assert_eq!(binary().phi(0.0).unwrap(), 0.0);
        assert!((binary().phi(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((lossy().phi(0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(binary().phi(-1.0).is_err());
        assert!(binary().phi_prime(-1.5).is_err());
        assert!(binary().c_of_p(-1.0).is_err());
    }

    #[test]
    fn phi_prime_closed_forms() {
        let ln2 = std::f64::consts::LN_2;
        assert!((binary().phi_prime(0.0).unwrap() - ln2).abs() < 1e-15);
        assert!((binary().phi_prime(1.0).unwrap() - ln2 / 2.0).abs() < 1e-15);
        let m = 3.7;
        let scaled = binary().scaled(m).unwrap();
        for p in [-0.5, 0.0, 0.7, 2.0] {
            let lhs = scaled.phi_prime(p).unwrap();
            let rhs = m * binary().phi_prime(p).unwrap();
            assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn c_of_p_examples() {
        assert_eq!(binary().c_of_p(0.0).unwrap(), 0.0);
        assert!((binary().c_of_p(1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((lossy().c_of_p(0.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn killing_rate_matches_phi_at_zero() {
        assert_eq!(binary().killing_rate(), 0.0);
        assert!((lossy().killing_rate() - 0.25).abs() < 1e-15);
        for nu in [binary(), lossy()] {
            assert!((nu.killing_rate() - nu.phi(0.0).unwrap()).abs() < 1e-15);
        }
        assert!(binary().is_conservative());
        assert!(!lossy().is_conservative());
    }

    #[test]
    fn lower_limit_diagnostic() {
        assert_eq!(binary().phi_lower_limit(), -1.0);
        assert!((binary().phi(-1.0 + 1e-9).unwrap() + 1.0).abs() < 1e-8);
    }

    #[test]
    fn bertoin_condition_examples() {
        assert!(binary().bertoin_condition_holds());
        assert!(lossy().bertoin_condition_holds());
        assert!(lossy().scaled(0.01).unwrap().bertoin_condition_holds());
    }

    #[test]
    fn critical_exponent_of_binary_split() {
        let nu = binary();
        let p = nu.critical_exponent().unwrap();
        assert!((p - 1.421_342_879_387_954_8).abs() < 1e-9, "p̄ = {p}");
        assert!(nu.critical_gap(p).abs() < 1e-10);
        let c = nu.critical_speed().unwrap();
        assert!((c - 0.258_796_632_080_757_3).abs() < 1e-9, "c = {c}");
        assert!((c - nu.c_of_p(p).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn critical_exponent_of_lossy_split() {
        let nu = lossy();
        let p = nu.critical_exponent().unwrap();
        assert!(nu.critical_gap(p).abs() < 1e-10);
        assert!((p - 0.679_516_744_463_241_3).abs() < 1e-9, "p̄ = {p}");
        assert!((nu.critical_speed().unwrap() - 0.351_501_089_104_271_1).abs() < 1e-9);
    }

    #[test]
    fn rejects_malformed_atoms() {
        let single = FragmentVector::new(vec![1.0]).unwrap_err();
        assert!(single.to_string().contains("ν(s₂ = 0) = 0"), "{single}");
        assert!(FragmentVector::new(vec![0.4]).is_err());
        assert!(FragmentVector::new(vec![1.0, 1e-3]).is_err());
        assert!(FragmentVector::new(vec![0.3, 0.6]).is_err());
        assert!(FragmentVector::new(vec![0.6, 0.6]).is_err());
        assert!(FragmentVector::new(vec![0.5, 0.0]).is_err());
        assert!(FragmentVector::new(vec![0.5, f64::NAN]).is_err());
        assert!(DislocationMeasure::single(0.0, &[0.5, 0.5]).is_err());
        assert!(DislocationMeasure::single(-1.0, &[0.5, 0.5]).is_err());
        assert!(DislocationMeasure::new(vec![]).is_err());
    }

    #[test]
    fn tolerates_round_off() {
        let f = FragmentVector::new(vec![0.5, 0.5 + 5e-13]).unwrap();
        assert!(f.mass() <= 1.0);
        assert!(f.sizes()[0] >= f.sizes()[1]);
        let f = FragmentVector::new(vec![0.1 + 0.2, 0.7]).unwrap_err();
        assert!(f.to_string().contains("nonincreasing"));
    }

    #[test]
    fn sampling_single_atom_is_degenerate() {
        let nu = binary();
        let mut rng = trial_rng(1, 0);
        for _ in 0..100 {
            assert_eq!(nu.sample_index(&mut rng), 0);
        }
    }

    #[test]
    fn sampling_frequencies_follow_weights() {
        let nu = DislocationMeasure::new(vec![
            (1.0, FragmentVector::new(vec![0.5, 0.5]).unwrap()),
            (3.0, FragmentVector::new(vec![0.5, 0.25]).unwrap()),
        ])
        .unwrap();
        let n = 100_000;
        let mut rng = trial_rng(11, 0);
        let hits = (0..n).filter(|_| nu.sample_index(&mut rng) == 1).count();
        let p = hits as f64 / n as f64;
        let sigma = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((p - 0.75).abs() < 3.0 * sigma, "p = {p}");

        let a: Vec<usize> = {
            let mut r = trial_rng(5, 2);
            (0..50).map(|_| nu.sample_index(&mut r)).collect()
        };
        let b: Vec<usize> = {
            let mut r = trial_rng(5, 2);
            (0..50).map(|_| nu.sample_index(&mut r)).collect()
        };
        assert_eq!(a, b);
    }
}

//! Sample-size and confidence numerics for scenario certificates.
//!
//! Everything here is pure integer/float arithmetic: binomial tail
//! probabilities in log space, the classic sufficient sample size, the
//! wait-and-judge fixed-point equation for the certified level `tau`, and the
//! order-statistic sample size for scalar bounds. Tail sums never form
//! factorials; terms are assembled from log-gamma values and combined by
//! log-sum-exp with compensated summation, so sample sizes up to the 10^5-10^6
//! range stay exact to the last useful digit.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Per-iteration confidence budget `kappa_t = 6 kappa / (pi^2 t^2)`.
///
/// The squares sum to the global budget: `sum_{t>=1} kappa_t = kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSchedule {
    pub kappa: f64,
}

impl ConfidenceSchedule {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && 0.0 < kappa && kappa < 1.0) {
            return Err(Error::InvalidLevel(format!(
                "kappa must lie in (0,1), got {kappa}"
            )));
        }
        Ok(ConfidenceSchedule { kappa })
    }

    /// Confidence budget spent at iteration `t >= 1`.
    pub fn kappa_at(&self, t: usize) -> f64 {
        assert!(t >= 1, "iterations are 1-based");
        6.0 * self.kappa / (std::f64::consts::PI.powi(2) * (t * t) as f64)
    }
}

/// How binomial trials are counted when several outputs share one scenario
/// draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialCounting {
    /// `m * |I|` trials: each output of each scenario counts.
    #[default]
    PerOutput,
    /// `m` trials: one joint trial per scenario.
    JointScenario,
}

/// Tube construction method recorded in a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeMethod {
    Classic,
    WaitAndJudge,
}

/// Provenance of one certified tube: scenario count, support count, certified
/// inner level `tau`, and the probability levels it was built for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub method: TubeMethod,
    pub m: usize,
    pub s: usize,
    pub tau: f64,
    pub nu: f64,
    pub kappa_t: f64,
}

fn check_level(name: &str, x: f64) -> Result<()> {
    if !(x.is_finite() && 0.0 < x && x < 1.0) {
        return Err(Error::InvalidLevel(format!(
            "{name} must lie in (0,1), got {x}"
        )));
    }
    Ok(())
}

// Saddle-point evaluation of the binomial log-pmf after Loader (as in R's
// dbinom): ln C(m,r) nu^r (1-nu)^(m-r) assembled from Stirling-error and
// binomial-deviance terms. Keeps terms accurate to a few ulp even for m in
// the millions, where differences of raw log-gamma values lose digits.

const LN_2PI: f64 = 1.837877066409345483560659472811;

#[rustfmt::skip]
const STIRLERR_SMALL: [f64; 16] = [
    0.0,
    0.0810614667953272582196702,
    0.0413406959554092940938221,
    0.02767792568499833914878929,
    0.02079067210376509311152277,
    0.01664469118982119216319487,
    0.01387612882307074799874573,
    0.01189670994589177009505572,
    0.010411265261972096497478567,
    0.009255462182712732917728637,
    0.008330563433362871256469318,
    0.007573675487951840794972024,
    0.006942840107209529865664152,
    0.006408994188004207068439631,
    0.005951370112758847735624416,
    0.005554733551962801371038690,
];

/// `ln Gamma(n+1) - ln(sqrt(2 pi n) (n/e)^n)` for integer `n >= 1`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    const S5: f64 = 691.0 / 360_360.0;
    const S6: f64 = 1.0 / 156.0;
    if n <= 15.0 {
        return STIRLERR_SMALL[n as usize];
    }
    let nn = n * n;
    if n > 15.7e6 {
        return S0 / n;
    }
    if n > 6180.0 {
        return (S0 - S1 / nn) / n;
    }
    if n > 205.0 {
        return (S0 - (S1 - S2 / nn) / nn) / n;
    }
    if n > 86.0 {
        return (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n;
    }
    if n > 27.0 {
        return (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n;
    }
    if n > 23.0 {
        return (S0 - (S1 - (S2 - (S3 - (S4 - S5 / nn) / nn) / nn) / nn) / nn) / n;
    }
    (S0 - (S1 - (S2 - (S3 - (S4 - (S5 - S6 / nn) / nn) / nn) / nn) / nn) / nn) / n
}

/// Binomial deviance `x ln(x/np) + np - x`, evaluated by series when `x` is
/// close to `np`.
fn bd0(x: f64, np: f64) -> f64 {
    if x == 0.0 {
        return np;
    }
    if (x - np).abs() < 0.1 * (x + np) {
        let d = x - np;
        let mut v = d / (x + np);
        let mut s = 0.5 * d * v;
        if d == 0.0 {
            return 0.0;
        }
        let mut ej = x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let prev = s;
            s += ej / (2 * j + 1) as f64;
            if s == prev {
                return 2.0 * s;
            }
        }
    }
    x * (x / np).ln() + np - x
}

fn ln_binomial_pmf(m: usize, r: usize, nu: f64) -> f64 {
    let n = m as f64;
    let x = r as f64;
    let q = 1.0 - nu;
    if r == 0 {
        return if nu > q { n * q.ln() } else { n * (-nu).ln_1p() };
    }
    if r == m {
        return if nu > q { n * (-q).ln_1p() } else { n * nu.ln() };
    }
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(x, n * nu) - bd0(n - x, n * q);
    let lf = LN_2PI + x.ln() + (-x / n).ln_1p();
    lc - 0.5 * lf
}

/// Natural log of the lower binomial tail; 0.0 when `k >= m`.
pub(crate) fn ln_binomial_tail(m: usize, k: usize, nu: f64) -> f64 {
    if k >= m {
        return 0.0;
    }
    // Terms rise to the mode near nu*(m+1) and fall after it; the largest
    // term within 0..=k sits at the clamped mode.
    let mode = ((nu * (m + 1) as f64).floor() as usize).min(k);
    let peak = ln_binomial_pmf(m, mode, nu);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for r in 0..=k {
        let v = (ln_binomial_pmf(m, r, nu) - peak).exp();
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    (peak + sum.ln()).min(0.0)
}

/// Lower binomial tail `sum_{r=0}^{k} C(m,r) nu^r (1-nu)^(m-r)`.
///
/// Terms are assembled in log space and combined by log-sum-exp around the
/// largest one, with Kahan compensation. Equals the regularized incomplete
/// beta value `I_{1-nu}(m-k, k+1)` for `k < m`.
pub fn binomial_tail(m: usize, k: usize, nu: f64) -> Result<f64> {
    check_level("nu", nu)?;
    Ok(ln_binomial_tail(m, k, nu).exp().min(1.0))
}

/// Search the minimal `m` in `[lo, inf)` satisfying a monotone predicate
/// (false below the answer, true at and above it).
fn minimal_m(lo: usize, pred: impl Fn(usize) -> bool) -> usize {
    let mut hi = lo.max(1);
    while !pred(hi) {
        hi = hi.saturating_mul(2);
        assert!(hi < usize::MAX / 2, "sample-size search diverged");
    }
    let mut lo = hi / 2;
    // Invariant: pred(hi) holds, pred(lo) fails (or lo is below the start).
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Minimal scenario count `m` such that the classic scenario bound holds for
/// support dimension `d`: `binomial_tail(trials(m), d-1, nu) <= kappa_t`.
///
/// `outputs` enters through the trial count when `counting` is
/// [`TrialCounting::PerOutput`].
pub fn classic_sample_size(
    d: usize,
    nu: f64,
    kappa_t: f64,
    outputs: usize,
    counting: TrialCounting,
) -> Result<usize> {
    if d < 1 {
        return Err(Error::InvalidLevel("support dimension must be >= 1".into()));
    }
    if outputs < 1 {
        return Err(Error::InvalidLevel("outputs must be >= 1".into()));
    }
    check_level("nu", nu)?;
    check_level("kappa_t", kappa_t)?;
    let trials = |m: usize| match counting {
        TrialCounting::PerOutput => m * outputs,
        TrialCounting::JointScenario => m,
    };
    // Compare in log space: boundary cases like (1-nu)^m = kappa_t then
    // resolve exactly instead of through an exp/ln round trip.
    let ln_kappa = kappa_t.ln();
    let pred = |m: usize| ln_binomial_tail(trials(m), d - 1, nu) <= ln_kappa;
    let m = minimal_m(1, pred);
    debug_assert!(pred(m) && (m == 1 || !pred(m - 1)));
    Ok(m)
}

/// Wait-and-judge residual at a fixed `tau`, evaluated in log space.
///
/// Positive sign means `kappa_t/(m+1) * sum_{r=s}^{m} C(r,s) tau^(r-s)`
/// still exceeds `C(m,s) tau^(m-s)`, i.e. the solved root lies above `tau`.
fn wj_residual_sign(m: usize, s: usize, kappa_t: f64, tau: f64, lg: &[f64]) -> f64 {
    debug_assert!(s < m);
    let ln_tau = tau.ln();
    // lg[x] = ln Gamma(x+1) = ln(x!), so ln C(r,s) = lg[r] - lg[s] - lg[r-s].
    let lc = |r: usize| lg[r] - lg[s] - lg[r - s];
    if tau <= 0.0 {
        return kappa_t / (m + 1) as f64; // only the r = s term survives
    }
    // Peak of C(r,s) tau^(r-s) over r: ratio (r+1)/(r+1-s) * tau crosses 1
    // near r = s/(1-tau) - 1.
    let peak_r = if tau >= 1.0 {
        m
    } else {
        ((s as f64 / (1.0 - tau)).ceil() as usize)
            .saturating_sub(1)
            .clamp(s, m)
    };
    let peak = lc(peak_r) + (peak_r - s) as f64 * ln_tau;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for r in s..=m {
        let v = (lc(r) + (r - s) as f64 * ln_tau - peak).exp();
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let lhs = (kappa_t / (m + 1) as f64).ln() + peak + sum.ln();
    let rhs = lc(m) + (m - s) as f64 * ln_tau;
    lhs - rhs
}

/// Solve the wait-and-judge fixed-point equation for `tau` in `(0, 1)`:
///
/// `kappa_t/(m+1) * sum_{r=s}^{m} C(r,s) tau^(r-s) - C(m,s) tau^(m-s) = 0`.
///
/// The residual is strictly positive at 0 and negative at 1, with a unique
/// root; bisection runs to float resolution (well below the 1e-12 absolute
/// tolerance the callers rely on). Returns 0 when `s = m`, where the residual
/// is the negative constant `kappa_t/(m+1) - 1`.
pub fn wj_solve_tau(m: usize, s: usize, kappa_t: f64) -> Result<f64> {
    if m < 1 || s > m {
        return Err(Error::InvalidLevel(format!(
            "need 1 <= m and s <= m, got m={m} s={s}"
        )));
    }
    check_level("kappa_t", kappa_t)?;
    if s == m {
        return Ok(0.0);
    }
    let lg: Vec<f64> = (0..=m + 1).map(|x| ln_gamma((x + 1) as f64)).collect();
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..90 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if wj_residual_sign(m, s, kappa_t, mid, &lg) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest `m >= s_guess` whose wait-and-judge level reaches `1 - nu`.
///
/// Evaluates the residual at the target `tau = 1 - nu` directly: the root
/// exceeds the target exactly when the residual there is nonnegative, and the
/// root grows with `m`, so a geometric bracket plus bisection finds the
/// minimal count without solving for `tau` at every candidate.
pub fn wj_sample_size_for(s_guess: usize, nu: f64, kappa_t: f64) -> Result<usize> {
    if s_guess < 1 {
        return Err(Error::InvalidLevel("s_guess must be >= 1".into()));
    }
    check_level("nu", nu)?;
    check_level("kappa_t", kappa_t)?;
    let tau_target = 1.0 - nu;
    let pred = |m: usize| {
        if m <= s_guess {
            return false;
        }
        let lg: Vec<f64> = (0..=m + 1).map(|x| ln_gamma((x + 1) as f64)).collect();
        wj_residual_sign(m, s_guess, kappa_t, tau_target, &lg) >= 0.0
    };
    Ok(minimal_m(s_guess + 1, pred))
}

/// Sample size and order index for scalar-functional bounds with `discards`
/// allowed above the bound: minimal `m` with
/// `binomial_tail(m, discards, nu) <= kappa_t`, paired with `p = m - discards`.
///
/// The certified claim is that the unknown functional value is at most the
/// `p`-th smallest of `m` sampled functional values, with probability at
/// least `1 - nu` and confidence at least `1 - kappa_t`.
pub fn scalar_sample_size(nu: f64, kappa_t: f64, discards: usize) -> Result<(usize, usize)> {
    check_level("nu", nu)?;
    check_level("kappa_t", kappa_t)?;
    let ln_kappa = kappa_t.ln();
    let pred = |m: usize| ln_binomial_tail(m, discards, nu) <= ln_kappa;
    let m = minimal_m(discards + 1, pred);
    Ok((m, m - discards))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::beta::beta_reg;

    const EX1_KAPPA_T: f64 = 6.0793e-4;

    #[test]
    fn kappa_schedule_values() {
        let sched = ConfidenceSchedule::new(1e-3).unwrap();
        let k1 = sched.kappa_at(1);
        assert!((k1 - 6e-3 / std::f64::consts::PI.powi(2)).abs() < 1e-18);
        assert!((k1 - 6.0793e-4).abs() < 1e-8);
        assert!((sched.kappa_at(2) - k1 / 4.0).abs() < 1e-18);
    }

    #[test]
    fn kappa_partial_sums_stay_below_budget() {
        let sched = ConfidenceSchedule::new(0.05).unwrap();
        let mut acc = 0.0;
        for t in 1..=10_000 {
            acc += sched.kappa_at(t);
        }
        assert!(acc <= 0.05);
    }

    #[test]
    fn tail_trivial_values() {
        assert_eq!(binomial_tail(5, 5, 0.3).unwrap(), 1.0);
        assert_eq!(binomial_tail(5, 9, 0.3).unwrap(), 1.0);
        assert!((binomial_tail(2, 0, 0.5).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tail_rejects_bad_levels() {
        assert!(binomial_tail(5, 2, 0.0).is_err());
        assert!(binomial_tail(5, 2, 1.0).is_err());
        assert!(binomial_tail(5, 2, f64::NAN).is_err());
    }

    #[test]
    fn example_sample_size_golden() {
        let sched = ConfidenceSchedule::new(1e-3).unwrap();
        let m = classic_sample_size(2000, 0.1, sched.kappa_at(1), 1, TrialCounting::PerOutput)
            .unwrap();
        assert_eq!(m, 21403);
        // Boundary behavior quoted for the same setting.
        let kt = sched.kappa_at(1);
        assert!(binomial_tail(21403, 1999, 0.1).unwrap() <= kt);
        assert!(binomial_tail(21402, 1999, 0.1).unwrap() > kt);
    }

    #[test]
    fn classic_sample_size_small_cases() {
        assert_eq!(
            classic_sample_size(1, 0.5, 0.5, 1, TrialCounting::PerOutput).unwrap(),
            1
        );
        // d = 1 closed form: ceil(ln kappa_t / ln(1 - nu)).
        assert_eq!(
            classic_sample_size(1, 0.1, 1e-3, 1, TrialCounting::PerOutput).unwrap(),
            66
        );
    }

    #[test]
    fn classic_sample_size_trial_counting() {
        let per = classic_sample_size(10, 0.2, 0.01, 2, TrialCounting::PerOutput).unwrap();
        let joint = classic_sample_size(10, 0.2, 0.01, 2, TrialCounting::JointScenario).unwrap();
        assert!(per < joint);
        assert!(binomial_tail(2 * per, 9, 0.2).unwrap() <= 0.01);
        assert!(binomial_tail(joint, 9, 0.2).unwrap() <= 0.01);
    }

    #[test]
    fn wj_two_scenario_hand_solve() {
        // kappa/3 (1 + 2 tau) = 2 tau  =>  tau = kappa / (6 - 2 kappa).
        let tau = wj_solve_tau(2, 1, 0.1).unwrap();
        assert!((tau - 0.1 / 5.8).abs() < 1e-12);
        assert!((tau - 0.017241).abs() < 1e-6);
    }

    #[test]
    fn wj_support_equals_m_gives_zero() {
        assert_eq!(wj_solve_tau(7, 7, 0.1).unwrap(), 0.0);
        assert_eq!(wj_solve_tau(1, 1, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn wj_example_exit_pair() {
        let tau = wj_solve_tau(596, 31, EX1_KAPPA_T).unwrap();
        assert!(tau >= 0.90 && tau < 1.0, "tau = {tau}");
    }

    #[test]
    fn wj_sample_size_reaches_target() {
        let m = wj_sample_size_for(31, 0.1, EX1_KAPPA_T).unwrap();
        assert!(m <= 21403);
        let tau = wj_solve_tau(m, 31, EX1_KAPPA_T).unwrap();
        assert!(tau >= 0.9);
        let tau_below = wj_solve_tau(m - 1, 31, EX1_KAPPA_T).unwrap();
        assert!(tau_below < 0.9);
    }

    #[test]
    fn wj_sample_size_monotone_in_support() {
        let m31 = wj_sample_size_for(31, 0.1, EX1_KAPPA_T).unwrap();
        let m40 = wj_sample_size_for(40, 0.1, EX1_KAPPA_T).unwrap();
        assert!(m40 >= m31);
    }

    #[test]
    fn wj_loose_levels_terminate_quickly() {
        let m = wj_sample_size_for(1, 0.5, 0.5).unwrap();
        assert!(m >= 1 && m < 50);
        assert!(wj_solve_tau(m, 1, 0.5).unwrap() >= 0.5);
    }

    #[test]
    fn scalar_sample_sizes() {
        assert_eq!(scalar_sample_size(0.1, EX1_KAPPA_T, 0).unwrap(), (71, 71));
        assert_eq!(scalar_sample_size(0.5, 0.5, 0).unwrap(), (1, 1));
        assert_eq!(scalar_sample_size(0.1, EX1_KAPPA_T, 1).unwrap(), (94, 93));
    }

    #[test]
    fn scalar_matches_linear_scan() {
        let (m, p) = scalar_sample_size(0.2, 0.03, 2).unwrap();
        let mut scan = 3;
        while binomial_tail(scan, 2, 0.2).unwrap() > 0.03 {
            scan += 1;
        }
        assert_eq!(m, scan);
        assert_eq!(p, m - 2);
    }

    proptest! {
        #[test]
        fn tail_matches_incomplete_beta(m in 1usize..10_000, kf in 0.0f64..1.0, nu in 0.001f64..0.999) {
            let k = ((m as f64 - 1.0) * kf) as usize;
            let mine = binomial_tail(m, k, nu).unwrap();
            let oracle = beta_reg((m - k) as f64, (k + 1) as f64, 1.0 - nu);
            let denom = oracle.abs().max(1e-300);
            prop_assert!(((mine - oracle) / denom).abs() <= 1e-10,
                "m={} k={} nu={} mine={} oracle={}", m, k, nu, mine, oracle);
        }

        #[test]
        fn tail_monotone(m in 2usize..2_000, kf in 0.0f64..1.0, nu in 0.01f64..0.99) {
            let k = ((m as f64 - 1.0) * kf) as usize;
            let base = binomial_tail(m, k, nu).unwrap();
            prop_assert!(binomial_tail(m + 1, k, nu).unwrap() <= base + 1e-14);
            prop_assert!(binomial_tail(m, k + 1, nu).unwrap() + 1e-14 >= base);
        }

        #[test]
        fn classic_size_is_minimal(d in 1usize..60, nu in 0.05f64..0.6, kappa in 0.001f64..0.5) {
            let m = classic_sample_size(d, nu, kappa, 1, TrialCounting::PerOutput).unwrap();
            prop_assert!(binomial_tail(m, d - 1, nu).unwrap() <= kappa);
            if m > 1 {
                prop_assert!(binomial_tail(m - 1, d - 1, nu).unwrap() > kappa);
            }
        }

        #[test]
        fn wj_root_residual_is_tiny(m in 2usize..1_500, sf in 0.0f64..1.0, kappa in 0.001f64..0.5) {
            let s = 1 + ((m as f64 - 2.0) * sf) as usize;
            let tau = wj_solve_tau(m, s, kappa).unwrap();
            prop_assert!((0.0..1.0).contains(&tau));
            let lg: Vec<f64> = (0..=m + 1).map(|x| ln_gamma((x + 1) as f64)).collect();
            // Log-residual at the root: |lhs - rhs| small means the scaled
            // polynomial residual is small.
            let r = wj_residual_sign(m, s, kappa, tau, &lg);
            prop_assert!(r.abs() <= 1e-9, "m={} s={} residual={}", m, s, r);
        }

        #[test]
        fn wj_tau_monotone(m in 3usize..800, sf in 0.0f64..1.0, kappa in 0.001f64..0.5) {
            let s = 1 + ((m as f64 - 3.0) * sf) as usize;
            let tau = wj_solve_tau(m, s, kappa).unwrap();
            prop_assert!(wj_solve_tau(m + 1, s, kappa).unwrap() + 1e-9 >= tau);
            prop_assert!(wj_solve_tau(m, s + 1, kappa).unwrap() <= tau + 1e-9);
        }

        #[test]
        fn scalar_zero_discards_closed_form(nu in 0.01f64..0.9, kappa in 1e-6f64..0.5) {
            let (m, p) = scalar_sample_size(nu, kappa, 0).unwrap();
            let closed = (kappa.ln() / (1.0 - nu).ln()).ceil() as usize;
            prop_assert_eq!(m, closed.max(1));
            prop_assert_eq!(p, m);
        }
    }
}

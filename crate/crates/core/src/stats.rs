//! Spacing statistics, heat-trace sums, and the 3D greedy approximation.
//!
//! These are the desk-scale observables behind the two main asymptotics:
//! in 2D the gaps dⱼ = nⱼ − λⱼ clump (⟨d⟩/⟨δ⟩ → 0), in 3D the mean gap
//! ratio tends to 1/2; both are driven by Ã(β) = Σ dⱼ e^{−βλⱼ}.

use crate::error::{Result, SebaError};
use crate::lattice::{DiagonalForm, NormSpectrum};
use crate::secular::PerturbedSpectrum;
use crate::sum::Accumulator;
use serde::Serialize;

/// Aligned gap data up to x: dⱼ (per perturbed level), δⱼ (per norm), and
/// the running sums A(x) = Σ_{λⱼ ≤ x} dⱼ.
#[derive(Clone, Debug)]
pub struct GapSequences {
    pub d: Vec<f64>,
    pub delta: Vec<f64>,
    pub a_partial: Vec<f64>,
}

fn check_aligned(spec: &NormSpectrum, pert: &PerturbedSpectrum) -> Result<()> {
    if spec.form() != &pert.form || spec.cutoff() < pert.spec_cutoff {
        return Err(SebaError::Consistency(
            "perturbed spectrum was not solved from this norm spectrum".into(),
        ));
    }
    Ok(())
}

/// Gap sequences up to `x`; requires `x` within both spectra.
pub fn gap_sequence(
    spec: &NormSpectrum,
    pert: &PerturbedSpectrum,
    x: f64,
) -> Result<GapSequences> {
    check_aligned(spec, pert)?;
    if x > pert.x_max || x > spec.cutoff() {
        return Err(SebaError::Range {
            what: "gap_sequence x within solved range",
            required: pert.x_max.min(spec.cutoff()),
            have: x,
        });
    }
    let norms = spec.norms();
    let mut d = Vec::new();
    let mut a_partial = Vec::new();
    let mut a = Accumulator::new();
    for level in &pert.levels {
        if level.lambda > x {
            break;
        }
        d.push(level.d);
        a.add(level.d);
        a_partial.push(a.total());
    }
    let n_count = spec.norm_count(x)?;
    let mut delta = Vec::new();
    for j in 0..n_count {
        if j + 1 >= norms.len() {
            return Err(SebaError::Range {
                what: "spacing beyond the last stored norm",
                required: x,
                have: norms[norms.len() - 1],
            });
        }
        delta.push(norms[j + 1] - norms[j]);
    }
    Ok(GapSequences { d, delta, a_partial })
}

/// ⟨d⟩ₓ/⟨δ⟩ₓ and the paper's A(x)/x form of the same ratio.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanGapRatio {
    pub x: f64,
    pub n_count: usize,
    pub mean_d: f64,
    pub mean_delta: f64,
    pub ratio: f64,
    pub a_of_x: f64,
    pub a_over_x: f64,
}

pub fn mean_gap_ratio(
    spec: &NormSpectrum,
    pert: &PerturbedSpectrum,
    x: f64,
) -> Result<MeanGapRatio> {
    let gaps = gap_sequence(spec, pert, x)?;
    let n = gaps.delta.len();
    if n == 0 || gaps.d.is_empty() {
        return Err(SebaError::SampleSize("no gaps below x".into()));
    }
    let a_of_x = *gaps.a_partial.last().unwrap();
    let sum_delta = crate::sum::sum_compensated(gaps.delta.iter().copied());
    Ok(MeanGapRatio {
        x,
        n_count: n,
        mean_d: a_of_x / n as f64,
        mean_delta: sum_delta / n as f64,
        ratio: a_of_x / sum_delta,
        a_of_x,
        a_over_x: a_of_x / x,
    })
}

/// Fraction of levels with dⱼ/⟨δ⟩ₓ above `threshold` (the clumping gauge).
pub fn clumping_fraction(
    spec: &NormSpectrum,
    pert: &PerturbedSpectrum,
    x: f64,
    threshold: f64,
) -> Result<f64> {
    let r = mean_gap_ratio(spec, pert, x)?;
    let gaps = gap_sequence(spec, pert, x)?;
    let over = gaps.d[1..]
        .iter()
        .filter(|&&d| d / r.mean_delta > threshold)
        .count();
    Ok(over as f64 / (gaps.d.len() - 1).max(1) as f64)
}

/// Density histogram on [0, 5]; spacings beyond 5 pool into the last bin.
#[derive(Clone, Debug, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub densities: Vec<f64>,
}

fn histogram(normalized: &[f64], bins: usize) -> Histogram {
    let (lo, hi) = (0.0, 5.0);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &s in normalized {
        let ix = ((s / width) as usize).min(bins - 1);
        counts[ix] += 1;
    }
    let n = normalized.len() as f64;
    Histogram {
        lo,
        hi,
        bins,
        densities: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
    }
}

/// Sup distance between the empirical CDF of `normalized` and 1 − e^{−s}.
pub fn ks_poisson(normalized: &[f64]) -> f64 {
    let mut s: Vec<f64> = normalized.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in s.iter().enumerate() {
        let f = 1.0 - (-x).exp();
        sup = sup
            .max(((i + 1) as f64 / n - f).abs())
            .max((i as f64 / n - f).abs());
    }
    sup
}

/// Spacing statistics at cutoff x: means, normalized spacings for both
/// sequences, histograms, KS distances, and A(x).
///
/// The raw normalized spacings stay in memory only; reports serialize the
/// summary and histograms.
#[derive(Clone, Debug, Serialize)]
pub struct SpacingReport {
    pub x: f64,
    pub n_count: usize,
    pub mean_delta: f64,
    pub mean_d: f64,
    pub ratio: f64,
    pub a_of_x: f64,
    pub norm_hist: Histogram,
    pub pert_hist: Histogram,
    pub ks_poisson_norms: f64,
    pub ks_poisson_perturbed: f64,
    #[serde(skip)]
    pub norm_spacings_normalized: Vec<f64>,
    #[serde(skip)]
    pub pert_spacings_normalized: Vec<f64>,
}

pub fn spacing_report(
    spec: &NormSpectrum,
    pert: &PerturbedSpectrum,
    x: f64,
    bins: usize,
) -> Result<SpacingReport> {
    if bins == 0 {
        return Err(SebaError::Domain("bins must be positive".into()));
    }
    let ratio = mean_gap_ratio(spec, pert, x)?;
    if ratio.n_count < 1000 {
        return Err(SebaError::SampleSize(format!(
            "spacing report needs N(x) >= 1000, have {}",
            ratio.n_count
        )));
    }
    let gaps = gap_sequence(spec, pert, x)?;
    let norm_normalized: Vec<f64> = gaps.delta.iter().map(|&d| d / ratio.mean_delta).collect();

    let lambdas: Vec<f64> = pert
        .lambdas()
        .take_while(|&l| l <= x)
        .collect();
    let pert_delta: Vec<f64> = lambdas.windows(2).map(|w| w[1] - w[0]).collect();
    let pert_mean =
        crate::sum::sum_compensated(pert_delta.iter().copied()) / pert_delta.len() as f64;
    let pert_normalized: Vec<f64> = pert_delta.iter().map(|&d| d / pert_mean).collect();

    Ok(SpacingReport {
        x,
        n_count: ratio.n_count,
        mean_delta: ratio.mean_delta,
        mean_d: ratio.mean_d,
        ratio: ratio.ratio,
        a_of_x: ratio.a_of_x,
        norm_hist: histogram(&norm_normalized, bins),
        pert_hist: histogram(&pert_normalized, bins),
        ks_poisson_norms: ks_poisson(&norm_normalized),
        ks_poisson_perturbed: ks_poisson(&pert_normalized),
        norm_spacings_normalized: norm_normalized,
        pert_spacings_normalized: pert_normalized,
    })
}

/// Ã(β) = Σ dⱼ e^{−βλⱼ} against the heat-trace difference form.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HeatTracePoint {
    pub beta: f64,
    pub a_tilde: f64,
    pub difference_form: f64,
    pub discrepancy: f64,
    /// β·Ã·log(1/β), the bounded quantity in 2D
    pub scaled_2d: f64,
    /// β·Ã, which tends to 1/2 in 3D
    pub scaled_3d: f64,
}

pub fn heat_sums(
    spec: &NormSpectrum,
    pert: &PerturbedSpectrum,
    beta: f64,
) -> Result<HeatTracePoint> {
    check_aligned(spec, pert)?;
    if !(beta > 0.0) {
        return Err(SebaError::Domain(format!("beta must be positive, got {beta}")));
    }
    let range = pert.x_max.min(spec.cutoff());
    if range < 40.0 / beta {
        return Err(SebaError::Range {
            what: "heat_sums spectra range >= 40/beta",
            required: 40.0 / beta,
            have: range,
        });
    }
    let norms = spec.norms();
    let mut a_tilde = Accumulator::new();
    let mut diff = Accumulator::new();
    for (j, level) in pert.levels.iter().enumerate() {
        a_tilde.add(level.d * (-beta * level.lambda).exp());
        diff.add((-beta * level.lambda).exp() - (-beta * norms[j]).exp());
    }
    let a_tilde = a_tilde.total();
    let difference_form = diff.total() / beta;
    Ok(HeatTracePoint {
        beta,
        a_tilde,
        difference_form,
        discrepancy: a_tilde - difference_form,
        scaled_2d: beta * a_tilde * (1.0 / beta).ln(),
        scaled_3d: beta * a_tilde,
    })
}

/// The three floor steps of the 3D greedy approximation of `t` by
/// q(m,n,k) = am² + bn² + ck².
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Greedy3 {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub s1: f64,
    pub s2: f64,
    pub rem: f64,
}

pub fn greedy_approx_3d(form3: &DiagonalForm, t: f64) -> Result<Greedy3> {
    if form3.dim() != 3 {
        return Err(SebaError::Domain("greedy approximation needs a 3D form".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SebaError::Domain(format!("t must be nonnegative, got {t}")));
    }
    let c = form3.values();
    let (m, s1) = greedy_step(t, c[0]);
    let (n, s2) = greedy_step(s1, c[1]);
    let (k, rem) = greedy_step(s2, c[2]);
    Ok(Greedy3 { m, n, k, s1, s2, rem })
}

/// m = ⌊√(t/a)⌋ with a float-safety clamp so that a·m² ≤ t exactly.
fn greedy_step(t: f64, a: f64) -> (u64, f64) {
    let mut m = (t / a).sqrt().floor() as i64;
    while m > 0 && a * (m as f64) * (m as f64) > t {
        m -= 1;
    }
    while a * ((m + 1) as f64) * ((m + 1) as f64) <= t {
        m += 1;
    }
    let m = m.max(0) as u64;
    (m, t - a * (m as f64) * (m as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_norms;
    use crate::secular::{solve_spectrum, ScattererPhase};
    use proptest::prelude::*;

    fn small_pair() -> (NormSpectrum, PerturbedSpectrum) {
        let form = DiagonalForm::rational(&[(1, 1), (1, 1)]).unwrap();
        let spec = enumerate_norms(&form, 500.0, 1e-10).unwrap();
        let phase = ScattererPhase::new(std::f64::consts::FRAC_PI_2).unwrap();
        let pert = solve_spectrum(&spec, &phase, 200.0, 1e-12).unwrap();
        (spec, pert)
    }

    #[test]
    fn gap_identity_delta_differences() {
        // delta_j - delta_j^phi = d_{j+1} - d_j
        let (spec, pert) = small_pair();
        let lam: Vec<f64> = pert.lambdas().collect();
        let d: Vec<f64> = pert.levels.iter().map(|l| l.d).collect();
        let norms = spec.norms();
        for j in 0..lam.len() - 1 {
            let delta = norms[j + 1] - norms[j];
            let delta_phi = lam[j + 1] - lam[j];
            assert!(((delta - delta_phi) - (d[j + 1] - d[j])).abs() < 1e-10);
        }
    }

    #[test]
    fn a_partial_nondecreasing_and_ratio_in_unit_interval() {
        let (spec, pert) = small_pair();
        let gaps = gap_sequence(&spec, &pert, 180.0).unwrap();
        for w in gaps.a_partial.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let r = mean_gap_ratio(&spec, &pert, 180.0).unwrap();
        assert!(r.ratio > 0.0 && r.ratio < 1.0);
        assert!((r.ratio - r.a_over_x).abs() < 0.05 * r.ratio.max(1e-12));
    }

    #[test]
    fn misaligned_spectra_rejected() {
        let (_, pert) = small_pair();
        let other = enumerate_norms(
            &DiagonalForm::rational(&[(2, 1), (1, 1)]).unwrap(),
            500.0,
            1e-10,
        )
        .unwrap();
        assert!(gap_sequence(&other, &pert, 100.0).is_err());
    }

    #[test]
    fn heat_sums_basics() {
        let (spec, pert) = small_pair();
        let h = heat_sums(&spec, &pert, 0.25).unwrap();
        assert!(h.a_tilde > 0.0);
        assert!(h.discrepancy.abs() < 0.2 * h.a_tilde);
        match heat_sums(&spec, &pert, 0.01) {
            Err(SebaError::Range { required, .. }) => assert_eq!(required, 4000.0),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn poisson_cdf_reference_point() {
        assert!((1.0 - (-1.0f64).exp() - 0.6321205588285577).abs() < 1e-15);
        // degenerate ECDF check: a single unit spacing
        let ks = ks_poisson(&[1.0]);
        assert!((ks - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn greedy_hand_example() {
        let cube = DiagonalForm::rational(&[(1, 1), (1, 1), (1, 1)]).unwrap();
        let g = greedy_approx_3d(&cube, 1e6).unwrap();
        assert_eq!((g.m, g.n, g.k), (1000, 0, 0));
        assert_eq!(g.rem, 0.0);

        let g = greedy_approx_3d(&cube, 123456.789).unwrap();
        assert_eq!((g.m, g.n, g.k), (351, 15, 5));
        assert!((g.s1 - 255.789).abs() < 1e-9);
        assert!((g.s2 - 30.789).abs() < 1e-9);
        assert!((g.rem - 5.789).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn greedy_chained_bounds(
            t in 1.0f64..1e8,
            a in 0.5f64..2.0,
            b in 0.5f64..2.0,
            c in 0.5f64..2.0,
        ) {
            let form = DiagonalForm::from_values(&[a, b, c]).unwrap();
            let g = greedy_approx_3d(&form, t).unwrap();
            prop_assert!(g.s1 >= 0.0 && g.s2 >= 0.0 && g.rem >= 0.0);
            prop_assert!(g.s1 <= 2.0 * (a * t).sqrt());
            prop_assert!(g.s2 <= 2.0 * (b * g.s1).sqrt());
            prop_assert!(g.rem <= 2.0 * (c * g.s2).sqrt());
        }
    }
}

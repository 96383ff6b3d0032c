//! The unperturbed spectrum: norms of a positive diagonal quadratic form.
//!
//! A flat torus is encoded by its dual-lattice form `q(v) = Σ cᵢ vᵢ²`; the
//! Laplace eigenvalues are exactly the values of `q` on integer vectors,
//! with multiplicity the number of representations. `NormSpectrum` stores
//! the distinct values up to a cutoff together with those multiplicities.
//!
//! Coefficients tagged as exact rationals are enumerated over a common
//! denominator and merged exactly; floating coefficients merge within a
//! relative tolerance (`merge_tol`, default 1e-10).

use crate::error::{Result, SebaError};
use crate::sum::Accumulator;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default relative tolerance identifying equal norms on the float path.
pub const DEFAULT_MERGE_TOL: f64 = 1e-10;
/// Default lattice-visit budget for enumeration and the brute-force oracle.
pub const DEFAULT_VISIT_BUDGET: u128 = 300_000_000;

/// One coefficient of the diagonal form, optionally exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coeff {
    /// Exact positive rational `num/den`.
    Exact { num: u64, den: u64 },
    /// Floating-point coefficient.
    Float(f64),
}

impl Coeff {
    pub fn value(self) -> f64 {
        match self {
            Coeff::Exact { num, den } => num as f64 / den as f64,
            Coeff::Float(x) => x,
        }
    }

    /// Parse `p/q` or an integer as exact, anything else as a float.
    pub fn parse(s: &str) -> Result<Coeff> {
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let num: u64 = p
                .trim()
                .parse()
                .map_err(|_| SebaError::Parse(format!("bad rational coefficient: {s}")))?;
            let den: u64 = q
                .trim()
                .parse()
                .map_err(|_| SebaError::Parse(format!("bad rational coefficient: {s}")))?;
            return Ok(Coeff::Exact { num, den });
        }
        if let Ok(n) = s.parse::<u64>() {
            return Ok(Coeff::Exact { num: n, den: 1 });
        }
        let x: f64 = s
            .parse()
            .map_err(|_| SebaError::Parse(format!("bad coefficient: {s}")))?;
        Ok(Coeff::Float(x))
    }

    /// Canonical text form that `parse` round-trips.
    pub fn format(&self) -> String {
        match self {
            Coeff::Exact { num, den: 1 } => format!("{num}"),
            Coeff::Exact { num, den } => format!("{num}/{den}"),
            Coeff::Float(x) => format!("{x:.17e}"),
        }
    }
}

/// A positive diagonal quadratic form in dimension 2 or 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalForm {
    coeffs: Vec<Coeff>,
}

impl DiagonalForm {
    pub fn new(coeffs: Vec<Coeff>) -> Result<Self> {
        let dim = coeffs.len();
        if dim != 2 && dim != 3 {
            return Err(SebaError::Domain(format!(
                "diagonal form must have dimension 2 or 3, got {dim}"
            )));
        }
        for c in &coeffs {
            let v = c.value();
            if !(v.is_finite() && v > 0.0) {
                return Err(SebaError::Domain(format!(
                    "coefficients must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self { coeffs })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&x| Coeff::Float(x)).collect())
    }

    pub fn rational(fracs: &[(u64, u64)]) -> Result<Self> {
        Self::new(
            fracs
                .iter()
                .map(|&(num, den)| Coeff::Exact { num, den })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Coeff] {
        &self.coeffs
    }

    pub fn values(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c.value()).collect()
    }

    pub fn all_exact(&self) -> bool {
        self.coeffs.iter().all(|c| matches!(c, Coeff::Exact { .. }))
    }

    /// Covolume of the dual lattice, √(∏ cᵢ).
    pub fn dual_covolume(&self) -> f64 {
        self.values().iter().product::<f64>().sqrt()
    }

    /// Volume of the underlying torus, (2π)^d / √(∏ cᵢ).
    pub fn torus_volume(&self) -> f64 {
        (2.0 * std::f64::consts::PI).powi(self.dim() as i32) / self.dual_covolume()
    }

    /// The form of the period lattice (squared geodesic lengths): 4π²/cᵢ.
    pub fn period_form(&self) -> DiagonalForm {
        let four_pi_sq = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
        DiagonalForm {
            coeffs: self
                .values()
                .iter()
                .map(|&c| Coeff::Float(four_pi_sq / c))
                .collect(),
        }
    }
}

/// `q(v)` with a fixed association order shared by enumeration and the
/// brute-force oracle, so both paths agree bit for bit.
#[inline]
fn q_value(coeffs: &[f64], v: &[i64]) -> f64 {
    let mut q = 0.0;
    for (c, &vi) in coeffs.iter().zip(v) {
        q += c * (vi as f64) * (vi as f64);
    }
    q
}

fn component_bounds(coeffs: &[f64], cutoff: f64) -> Vec<i64> {
    coeffs
        .iter()
        .map(|&c| (cutoff / c).sqrt().floor() as i64)
        .collect()
}

fn visit_count(bounds: &[i64]) -> u128 {
    bounds.iter().map(|&b| 2 * b as u128 + 1).product()
}

/// Exact sidecar: norms as scaled integers over a common denominator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactSidecar {
    pub den: u128,
    pub nums: Vec<u128>,
}

/// Sorted distinct norms with multiplicities up to a cutoff.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormSpectrum {
    form: DiagonalForm,
    cutoff: f64,
    merge_tol: f64,
    norms: Vec<f64>,
    mults: Vec<u64>,
    exact: Option<ExactSidecar>,
}

/// Enumeration limits.
#[derive(Clone, Copy, Debug)]
pub struct EnumOptions {
    /// Maximum number of integer vectors visited.
    pub max_visits: u128,
    /// Worker count; 1 is sequential. Any value produces identical output.
    pub workers: usize,
}

impl Default for EnumOptions {
    fn default() -> Self {
        Self {
            max_visits: DEFAULT_VISIT_BUDGET,
            workers: 1,
        }
    }
}

/// Enumerate the norm spectrum of `form` up to `cutoff`.
pub fn enumerate_norms(form: &DiagonalForm, cutoff: f64, merge_tol: f64) -> Result<NormSpectrum> {
    enumerate_norms_with(form, cutoff, merge_tol, &EnumOptions::default())
}

pub fn enumerate_norms_with(
    form: &DiagonalForm,
    cutoff: f64,
    merge_tol: f64,
    opts: &EnumOptions,
) -> Result<NormSpectrum> {
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(SebaError::Domain(format!("cutoff must be positive, got {cutoff}")));
    }
    if !(0.0..=1e-6).contains(&merge_tol) {
        return Err(SebaError::Domain(format!(
            "merge_tol must lie in [0, 1e-6], got {merge_tol}"
        )));
    }
    let coeffs = form.values();
    let bounds = component_bounds(&coeffs, cutoff);
    let required = visit_count(&bounds);
    if required > opts.max_visits {
        return Err(SebaError::Capacity {
            required,
            budget: opts.max_visits,
        });
    }

    if form.all_exact() {
        enumerate_exact(form, cutoff, merge_tol, &bounds, opts)
    } else {
        enumerate_float(form, cutoff, merge_tol, &coeffs, &bounds, opts)
    }
}

fn enumerate_float(
    form: &DiagonalForm,
    cutoff: f64,
    merge_tol: f64,
    coeffs: &[f64],
    bounds: &[i64],
    opts: &EnumOptions,
) -> Result<NormSpectrum> {
    let b0 = bounds[0];
    let collect_slab = |m: i64| -> Vec<f64> {
        let mut out = Vec::new();
        let a = coeffs[0] * (m as f64) * (m as f64);
        if a > cutoff {
            return out;
        }
        if coeffs.len() == 2 {
            let b1 = ((cutoff - a).max(0.0) / coeffs[1]).sqrt().floor() as i64 + 1;
            for k in -b1..=b1 {
                let q = a + coeffs[1] * (k as f64) * (k as f64);
                if q <= cutoff {
                    out.push(q);
                }
            }
        } else {
            let b1 = ((cutoff - a).max(0.0) / coeffs[1]).sqrt().floor() as i64 + 1;
            for k in -b1..=b1 {
                let ak = a + coeffs[1] * (k as f64) * (k as f64);
                if ak > cutoff {
                    continue;
                }
                let b2 = ((cutoff - ak).max(0.0) / coeffs[2]).sqrt().floor() as i64 + 1;
                for l in -b2..=b2 {
                    let q = ak + coeffs[2] * (l as f64) * (l as f64);
                    if q <= cutoff {
                        out.push(q);
                    }
                }
            }
        }
        out
    };

    let mut values: Vec<f64> = if opts.workers > 1 {
        let slabs: Vec<i64> = (-b0..=b0).collect();
        run_in_pool(opts.workers, || {
            slabs.par_iter().map(|&m| collect_slab(m)).flatten().collect()
        })
    } else {
        let mut values = Vec::new();
        for m in -b0..=b0 {
            values.extend(collect_slab(m));
        }
        values
    };
    values.sort_unstable_by(f64::total_cmp);

    let (norms, mults) = cluster(&values, merge_tol);
    let spec = NormSpectrum {
        form: form.clone(),
        cutoff,
        merge_tol,
        norms,
        mults,
        exact: None,
    };
    spec.validate_lattice()?;
    Ok(spec)
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn enumerate_exact(
    form: &DiagonalForm,
    cutoff: f64,
    merge_tol: f64,
    bounds: &[i64],
    opts: &EnumOptions,
) -> Result<NormSpectrum> {
    let fracs: Vec<(u128, u128)> = form
        .coeffs()
        .iter()
        .map(|c| match *c {
            Coeff::Exact { num, den } => (num as u128, den as u128),
            Coeff::Float(_) => unreachable!(),
        })
        .collect();
    let mut den: u128 = 1;
    for &(_, d) in &fracs {
        den = den / gcd(den, d) * d;
    }
    let scaled: Vec<u128> = fracs.iter().map(|&(n, d)| n * (den / d)).collect();
    let cutoff_scaled_f = cutoff * den as f64;
    if !(cutoff_scaled_f.is_finite() && cutoff_scaled_f < 2f64.powi(52)) {
        return Err(SebaError::Domain(
            "cutoff * common denominator exceeds exact range".into(),
        ));
    }
    let cutoff_scaled = cutoff_scaled_f.floor() as u128;

    let b0 = bounds[0];
    let collect_slab = |m: i64| -> Vec<u128> {
        let mut out = Vec::new();
        let a = scaled[0] * (m as i128 * m as i128) as u128;
        if a > cutoff_scaled {
            return out;
        }
        let b1 = (((cutoff_scaled - a) / scaled[1]) as f64).sqrt().floor() as i64 + 1;
        if scaled.len() == 2 {
            for k in -b1..=b1 {
                let q = a + scaled[1] * (k as i128 * k as i128) as u128;
                if q <= cutoff_scaled {
                    out.push(q);
                }
            }
        } else {
            for k in -b1..=b1 {
                let ak = a + scaled[1] * (k as i128 * k as i128) as u128;
                if ak > cutoff_scaled {
                    continue;
                }
                let b2 = (((cutoff_scaled - ak) / scaled[2]) as f64).sqrt().floor() as i64 + 1;
                for l in -b2..=b2 {
                    let q = ak + scaled[2] * (l as i128 * l as i128) as u128;
                    if q <= cutoff_scaled {
                        out.push(q);
                    }
                }
            }
        }
        out
    };

    let mut nums: Vec<u128> = if opts.workers > 1 {
        let slabs: Vec<i64> = (-b0..=b0).collect();
        run_in_pool(opts.workers, || {
            slabs.par_iter().map(|&m| collect_slab(m)).flatten().collect()
        })
    } else {
        let mut nums = Vec::new();
        for m in -b0..=b0 {
            nums.extend(collect_slab(m));
        }
        nums
    };
    nums.sort_unstable();

    let mut distinct = Vec::new();
    let mut mults = Vec::new();
    for &q in &nums {
        if distinct.last() == Some(&q) {
            *mults.last_mut().unwrap() += 1u64;
        } else {
            distinct.push(q);
            mults.push(1);
        }
    }
    let norms: Vec<f64> = distinct.iter().map(|&q| q as f64 / den as f64).collect();
    let spec = NormSpectrum {
        form: form.clone(),
        cutoff,
        merge_tol,
        norms,
        mults,
        exact: Some(ExactSidecar { den, nums: distinct }),
    };
    spec.validate_lattice()?;
    Ok(spec)
}

fn run_in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
        .install(job)
}

/// Merge a sorted value list into distinct norms within the relative tolerance.
fn cluster(values: &[f64], merge_tol: f64) -> (Vec<f64>, Vec<u64>) {
    let mut norms = Vec::new();
    let mut mults = Vec::new();
    let mut i = 0;
    while i < values.len() {
        let mut j = i + 1;
        let mut prev = values[i];
        while j < values.len() && values[j] - prev <= merge_tol * values[j].max(1.0) {
            prev = values[j];
            j += 1;
        }
        let mut acc = Accumulator::new();
        for &v in &values[i..j] {
            acc.add(v);
        }
        norms.push(acc.total() / (j - i) as f64);
        mults.push((j - i) as u64);
        i = j;
    }
    (norms, mults)
}

impl NormSpectrum {
    /// Build a spectrum from explicit parts (test fixtures, file loads).
    pub fn from_parts(
        form: DiagonalForm,
        cutoff: f64,
        merge_tol: f64,
        norms: Vec<f64>,
        mults: Vec<u64>,
    ) -> Result<Self> {
        let spec = Self {
            form,
            cutoff,
            merge_tol,
            norms,
            mults,
            exact: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Ordering and origin invariants (fixtures included).
    pub fn validate(&self) -> Result<()> {
        if self.norms.len() != self.mults.len() {
            return Err(SebaError::Consistency("norms/mults length mismatch".into()));
        }
        if self.norms.is_empty() || self.norms[0] != 0.0 || self.mults[0] != 1 {
            return Err(SebaError::Consistency(
                "spectrum must start with n0 = 0, r(n0) = 1".into(),
            ));
        }
        for j in 1..self.norms.len() {
            let (a, b) = (self.norms[j - 1], self.norms[j]);
            if !(b - a > self.merge_tol * b.max(1.0)) {
                return Err(SebaError::Consistency(format!(
                    "norms not separated at index {j}: {a} vs {b}"
                )));
            }
        }
        Ok(())
    }

    /// Lattice invariants on top of `validate`: every nonzero norm has even
    /// multiplicity (±v symmetry). Enumeration output always satisfies this;
    /// synthetic fixtures need not.
    pub fn validate_lattice(&self) -> Result<()> {
        self.validate()?;
        for j in 1..self.norms.len() {
            if self.mults[j] % 2 != 0 {
                return Err(SebaError::Consistency(format!(
                    "multiplicity of nonzero norm {} is odd ({})",
                    self.norms[j], self.mults[j]
                )));
            }
        }
        Ok(())
    }

    pub fn form(&self) -> &DiagonalForm {
        &self.form
    }
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }
    pub fn merge_tol(&self) -> f64 {
        self.merge_tol
    }
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
    pub fn mults(&self) -> &[u64] {
        &self.mults
    }
    pub fn exact(&self) -> Option<&ExactSidecar> {
        self.exact.as_ref()
    }
    pub fn len(&self) -> usize {
        self.norms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Total number of lattice vectors represented, Σ r(nⱼ).
    pub fn total_points(&self) -> u128 {
        self.mults.iter().map(|&r| r as u128).sum()
    }

    /// N(x) = #{j : nⱼ ≤ x}, counting n₀ = 0.
    pub fn norm_count(&self, x: f64) -> Result<usize> {
        if !(0.0..=self.cutoff).contains(&x) {
            return Err(SebaError::Range {
                what: "norm_count x within [0, cutoff]",
                required: self.cutoff,
                have: x,
            });
        }
        Ok(self.norms.partition_point(|&n| n <= x))
    }

    /// Mean spacing (1/N(x)) Σ_{nⱼ ≤ x} δⱼ with δⱼ = nⱼ₊₁ − nⱼ.
    ///
    /// Requires the norm after the last counted one to be stored so the
    /// final spacing exists.
    pub fn mean_spacing(&self, x: f64) -> Result<f64> {
        let n = self.norm_count(x)?;
        if n < 1 || n >= self.norms.len() {
            return Err(SebaError::Domain(format!(
                "mean spacing needs at least one norm <= x and one beyond (N = {n}, stored = {})",
                self.norms.len()
            )));
        }
        let mut acc = Accumulator::new();
        for j in 0..n {
            acc.add(self.norms[j + 1] - self.norms[j]);
        }
        Ok(acc.total() / n as f64)
    }

    /// Count lattice points with q(v) ≤ x from the stored multiplicities.
    pub fn count_points_upto(&self, x: f64) -> Result<u128> {
        let n = self.norm_count(x)?;
        Ok(self.mults[..n].iter().map(|&r| r as u128).sum())
    }
}

/// Exhaustive lattice-point count with q(v) ≤ x (test oracle).
pub fn brute_force_count(form: &DiagonalForm, x: f64) -> Result<u64> {
    brute_force_count_with(form, x, DEFAULT_VISIT_BUDGET)
}

pub fn brute_force_count_with(form: &DiagonalForm, x: f64, max_visits: u128) -> Result<u64> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(SebaError::Domain(format!("x must be nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok(1);
    }
    let coeffs = form.values();
    let bounds = component_bounds(&coeffs, x);
    let required = visit_count(&bounds);
    if required > max_visits {
        return Err(SebaError::Capacity {
            required,
            budget: max_visits,
        });
    }
    let mut count = 0u64;
    let mut v = vec![0i64; form.dim()];
    // full-box loop, deliberately independent of the slab enumeration
    if form.dim() == 2 {
        for m in -bounds[0]..=bounds[0] {
            for k in -bounds[1]..=bounds[1] {
                v[0] = m;
                v[1] = k;
                if q_value(&coeffs, &v) <= x {
                    count += 1;
                }
            }
        }
    } else {
        for m in -bounds[0]..=bounds[0] {
            for k in -bounds[1]..=bounds[1] {
                for l in -bounds[2]..=bounds[2] {
                    v[0] = m;
                    v[1] = k;
                    v[2] = l;
                    if q_value(&coeffs, &v) <= x {
                        count += 1;
                    }
                }
            }
        }
    }
    Ok(count)
}

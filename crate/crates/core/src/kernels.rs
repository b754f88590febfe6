//! Center-surround difference-of-Gaussians kernels.
//!
//! The on-center kernel is a narrow excitatory Gaussian minus a wide
//! inhibitory one. Its scale `sigma` follows in closed form from the center
//! radius and the center/surround ratio `gamma`, so the only free inputs are
//! the kernel size and `gamma`. Sampled kernels are normalized so that the
//! positive entries sum to +1 and the negative entries to -1; the kernel then
//! annihilates constant inputs.

use std::fmt;
use std::str::FromStr;

use crate::error::{OocsError, Result};

/// Relative magnitude below which a sampled entry counts as a zero crossing.
const ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::On => 1.0,
            Polarity::Off => -1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Polarity::On => Polarity::Off,
            Polarity::Off => Polarity::On,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::On => "on",
            Polarity::Off => "off",
        })
    }
}

impl FromStr for Polarity {
    type Err = OocsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "on" => Ok(Polarity::On),
            "off" => Ok(Polarity::Off),
            other => Err(OocsError::Domain(format!("unknown polarity `{other}`"))),
        }
    }
}

/// How the sampled sign partition is turned into weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum KernelProfile {
    /// Sampled DoG, each sign class rescaled to unit mass.
    #[default]
    Dog,
    /// Same sign partition, uniform weights `1/n_c` and `-1/n_s`.
    Flat,
}

impl fmt::Display for KernelProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelProfile::Dog => "dog",
            KernelProfile::Flat => "flat",
        })
    }
}

impl FromStr for KernelProfile {
    type Err = OocsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dog" => Ok(KernelProfile::Dog),
            "flat" => Ok(KernelProfile::Flat),
            other => Err(OocsError::Domain(format!("unknown kernel profile `{other}`"))),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(OocsError::Domain(format!("gamma must lie in (0, 1), got {gamma}")))
    }
}

fn check_kernel_size(kernel_size: usize) -> Result<()> {
    if kernel_size >= 3 && kernel_size % 2 == 1 {
        Ok(())
    } else {
        Err(OocsError::EvenKernelSize(kernel_size))
    }
}

/// Gaussian scale that puts the zero crossing of the balanced DoG
/// (`A_c = A_s`) at `center_radius`.
pub fn sigma_from_radius(center_radius: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(center_radius > 0.0 && center_radius.is_finite()) {
        return Err(OocsError::Domain(format!(
            "center radius must be positive, got {center_radius}"
        )));
    }
    Ok(center_radius / (2.0 * gamma) * ((1.0 - gamma * gamma) / -gamma.ln()).sqrt())
}

/// The center-surround DoG with analytic scale: a center Gaussian of width
/// `gamma * sigma` and height `a_c / gamma^2` minus a surround Gaussian of
/// width `sigma` and height `a_s`.
pub fn dog_petkov(x: f64, y: f64, sigma: f64, gamma: f64, a_c: f64, a_s: f64) -> f64 {
    let r2 = x * x + y * y;
    let g2 = gamma * gamma;
    let s2 = sigma * sigma;
    a_c / g2 * (-r2 / (2.0 * g2 * s2)).exp() - a_s * (-r2 / (2.0 * s2)).exp()
}

/// Classic two-Gaussian receptive field, kept for comparison only. Note the
/// exponent divides by `sigma` rather than `2 sigma^2`.
pub fn dog_rodieck(x: f64, y: f64, k1: f64, k2: f64, sigma1: f64, sigma2: f64) -> Result<f64> {
    if !(sigma1 > 0.0 && sigma2 > 0.0) {
        return Err(OocsError::Domain(format!(
            "Gaussian widths must be positive, got {sigma1} and {sigma2}"
        )));
    }
    let r2 = x * x + y * y;
    Ok(k1 * (-r2 / sigma1).exp() - k2 * (-r2 / sigma2).exp())
}

/// Fully resolved parameters of a fixed on/off kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DogParams {
    pub kernel_size: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub center_radius: f64,
    pub surround_radius: f64,
    pub polarity: Polarity,
}

impl DogParams {
    /// The surround spans the whole kernel (`r_s = k/2`) and the center is
    /// `r_c = gamma * r_s`.
    pub fn new(kernel_size: usize, gamma: f64, polarity: Polarity) -> Result<Self> {
        check_kernel_size(kernel_size)?;
        check_gamma(gamma)?;
        let surround_radius = kernel_size as f64 / 2.0;
        let center_radius = gamma * surround_radius;
        let sigma = sigma_from_radius(center_radius, gamma)?;
        Ok(Self {
            kernel_size,
            gamma,
            sigma,
            center_radius,
            surround_radius,
            polarity,
        })
    }

    pub fn with_polarity(self, polarity: Polarity) -> Self {
        Self { polarity, ..self }
    }

    pub fn kernel(&self, profile: KernelProfile) -> Result<KernelMatrix> {
        match profile {
            KernelProfile::Dog => build_oocs_kernel(self.kernel_size, self.gamma, self.polarity),
            KernelProfile::Flat => build_flat_kernel(self.kernel_size, self.gamma, self.polarity),
        }
    }
}

/// Positive and negative mass of a kernel or a continuous DoG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    pub positive_mass: f64,
    pub negative_mass: f64,
    pub total: f64,
    pub max_abs_entry: f64,
}

impl fmt::Display for BalanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "positive_mass={:.12} negative_mass={:.12} total={:.3e} max_abs_entry={:.12}",
            self.positive_mass, self.negative_mass, self.total, self.max_abs_entry
        )
    }
}

/// A square, odd-sized, balance-normalized kernel stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    size: usize,
    gamma: f64,
    polarity: Polarity,
    weights: Vec<f64>,
    positive_sum: f64,
    negative_sum: f64,
    positive_count: usize,
    negative_count: usize,
}

impl KernelMatrix {
    fn from_weights(size: usize, gamma: f64, polarity: Polarity, weights: Vec<f64>) -> Self {
        debug_assert_eq!(weights.len(), size * size);
        let mut k = Self {
            size,
            gamma,
            polarity,
            weights,
            positive_sum: 0.0,
            negative_sum: 0.0,
            positive_count: 0,
            negative_count: 0,
        };
        k.recount();
        k
    }

    fn recount(&mut self) {
        let (mut ps, mut ns, mut pc, mut nc) = (0.0, 0.0, 0, 0);
        for &w in &self.weights {
            if w > 0.0 {
                ps += w;
                pc += 1;
            } else if w < 0.0 {
                ns += w;
                nc += 1;
            }
        }
        self.positive_sum = ps;
        self.negative_sum = ns;
        self.positive_count = pc;
        self.negative_count = nc;
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at row `i`, column `j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.size + j]
    }

    pub fn positive_sum(&self) -> f64 {
        self.positive_sum
    }

    pub fn negative_sum(&self) -> f64 {
        self.negative_sum
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn negative_count(&self) -> usize {
        self.negative_count
    }

    pub fn zero_count(&self) -> usize {
        self.weights.len() - self.positive_count - self.negative_count
    }

    /// Entrywise negation with the opposite polarity label.
    pub fn negated(&self) -> Self {
        let weights = self.weights.iter().map(|w| -w).collect();
        Self::from_weights(self.size, self.gamma, self.polarity.opposite(), weights)
    }

    pub fn balance(&self) -> BalanceReport {
        BalanceReport {
            positive_mass: self.positive_sum,
            negative_mass: self.negative_sum,
            total: self.positive_sum + self.negative_sum,
            max_abs_entry: self.weights.iter().fold(0.0, |m, w| m.max(w.abs())),
        }
    }

    /// Plain-text export: a header line, then one space-separated row per line.
    pub fn to_text(&self) -> String {
        let (num, den) = approximate_fraction(self.gamma);
        let mut out = format!(
            "# oocs kernel size={} gamma={}/{} polarity={}\n",
            self.size, num, den, self.polarity
        );
        for row in self.weights.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:.16e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| OocsError::Format("empty kernel file".into()))?;
        let rest = header
            .strip_prefix("# oocs kernel ")
            .ok_or_else(|| OocsError::Format(format!("bad kernel header `{header}`")))?;
        let (mut size, mut gamma, mut polarity) = (None, None, None);
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| OocsError::Format(format!("bad header field `{field}`")))?;
            match key {
                "size" => {
                    size = Some(value.parse::<usize>().map_err(|e| {
                        OocsError::Format(format!("bad kernel size `{value}`: {e}"))
                    })?)
                }
                "gamma" => gamma = Some(parse_ratio(value)?),
                "polarity" => polarity = Some(value.parse::<Polarity>()?),
                _ => return Err(OocsError::Format(format!("unknown header field `{key}`"))),
            }
        }
        let (size, gamma, polarity) = match (size, gamma, polarity) {
            (Some(s), Some(g), Some(p)) => (s, g, p),
            _ => return Err(OocsError::Format("kernel header is missing fields".into())),
        };
        let mut weights = Vec::with_capacity(size * size);
        for line in lines {
            for tok in line.split_whitespace() {
                weights.push(
                    tok.parse::<f64>()
                        .map_err(|e| OocsError::Format(format!("bad weight `{tok}`: {e}")))?,
                );
            }
        }
        if weights.len() != size * size {
            return Err(OocsError::Format(format!(
                "expected {} weights, found {}",
                size * size,
                weights.len()
            )));
        }
        Ok(Self::from_weights(size, gamma, polarity, weights))
    }
}

/// Parses `num/den` or a plain decimal.
pub fn parse_ratio(s: &str) -> Result<f64> {
    let bad = |e: &dyn fmt::Display| OocsError::Domain(format!("bad ratio `{s}`: {e}"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|e| bad(&e))?;
            let d: f64 = d.trim().parse().map_err(|e| bad(&e))?;
            if d == 0.0 {
                return Err(bad(&"zero denominator"));
            }
            Ok(n / d)
        }
        None => s.trim().parse().map_err(|e| bad(&e)),
    }
}

/// Best rational approximation by continued fractions, denominator <= 10^6.
pub fn approximate_fraction(x: f64) -> (i64, i64) {
    const MAX_DEN: i64 = 1_000_000;
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut v = x;
    for _ in 0..64 {
        let a = v.floor();
        let ai = a as i64;
        let k2 = ai * k1 + k0;
        if k2 > MAX_DEN {
            break;
        }
        let h2 = ai * h1 + h0;
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        if (h1 as f64 / k1 as f64 - x).abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
        let frac = v - a;
        if frac.abs() < 1e-15 {
            break;
        }
        v = 1.0 / frac;
    }
    (h1, k1)
}

/// Samples the balanced DoG at integer offsets and returns the unnormalized
/// values together with the sign partition.
fn sample_dog(kernel_size: usize, gamma: f64) -> Result<Vec<f64>> {
    let params = DogParams::new(kernel_size, gamma, Polarity::On)?;
    let half = (kernel_size / 2) as isize;
    let center = dog_petkov(0.0, 0.0, params.sigma, gamma, 1.0, 1.0);
    let mut values = Vec::with_capacity(kernel_size * kernel_size);
    for i in -half..=half {
        for j in -half..=half {
            let v = dog_petkov(i as f64, j as f64, params.sigma, gamma, 1.0, 1.0);
            values.push(if v.abs() <= ZERO_TOL * center { 0.0 } else { v });
        }
    }
    let has_pos = values.iter().any(|&v| v > 0.0);
    let has_neg = values.iter().any(|&v| v < 0.0);
    if !has_pos || !has_neg {
        return Err(OocsError::DegenerateKernel {
            size: kernel_size,
            gamma,
            class: if has_pos { "negative" } else { "positive" },
        });
    }
    Ok(values)
}

/// Balanced on- or off-center kernel. The off kernel is the exact entrywise
/// negation of the on kernel.
pub fn build_oocs_kernel(kernel_size: usize, gamma: f64, polarity: Polarity) -> Result<KernelMatrix> {
    let values = sample_dog(kernel_size, gamma)?;
    let pos: f64 = values.iter().filter(|&&v| v > 0.0).sum();
    let neg: f64 = -values.iter().filter(|&&v| v < 0.0).sum::<f64>();
    let weights = values
        .into_iter()
        .map(|v| {
            if v > 0.0 {
                v / pos
            } else if v < 0.0 {
                v / neg
            } else {
                0.0
            }
        })
        .collect();
    let on = KernelMatrix::from_weights(kernel_size, gamma, Polarity::On, weights);
    Ok(match polarity {
        Polarity::On => on,
        Polarity::Off => on.negated(),
    })
}

/// Flat ablation kernel: the DoG sign partition with uniform weights.
pub fn build_flat_kernel(kernel_size: usize, gamma: f64, polarity: Polarity) -> Result<KernelMatrix> {
    let values = sample_dog(kernel_size, gamma)?;
    let n_pos = values.iter().filter(|&&v| v > 0.0).count() as f64;
    let n_neg = values.iter().filter(|&&v| v < 0.0).count() as f64;
    let weights = values
        .into_iter()
        .map(|v| {
            if v > 0.0 {
                1.0 / n_pos
            } else if v < 0.0 {
                -1.0 / n_neg
            } else {
                0.0
            }
        })
        .collect();
    let on = KernelMatrix::from_weights(kernel_size, gamma, Polarity::On, weights);
    Ok(match polarity {
        Polarity::On => on,
        Polarity::Off => on.negated(),
    })
}

/// Midpoint-rule integration of the rectified halves of the balanced
/// (`A_c = A_s = 1`) DoG over the square `[-domain_radius, domain_radius]^2`.
pub fn continuous_balance_check(
    sigma: f64,
    gamma: f64,
    domain_radius: f64,
    grid_step: f64,
) -> Result<BalanceReport> {
    check_gamma(gamma)?;
    for (name, v) in [("sigma", sigma), ("domain_radius", domain_radius), ("grid_step", grid_step)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(OocsError::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    let n = (2.0 * domain_radius / grid_step).round().max(1.0) as usize;
    let h = 2.0 * domain_radius / n as f64;
    let coords: Vec<f64> = (0..n).map(|i| -domain_radius + (i as f64 + 0.5) * h).collect();
    let (mut pos, mut neg, mut max_abs) = (0.0f64, 0.0f64, 0.0f64);
    for &x in &coords {
        let (mut row_pos, mut row_neg) = (0.0, 0.0);
        for &y in &coords {
            let v = dog_petkov(x, y, sigma, gamma, 1.0, 1.0);
            if v > 0.0 {
                row_pos += v;
            } else {
                row_neg += v;
            }
            max_abs = max_abs.max(v.abs());
        }
        pos += row_pos;
        neg += row_neg;
    }
    let area = h * h;
    Ok(BalanceReport {
        positive_mass: pos * area,
        negative_mass: neg * area,
        total: (pos + neg) * area,
        max_abs_entry: max_abs,
    })
}

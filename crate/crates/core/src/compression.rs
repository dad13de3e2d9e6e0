//! Bounded-distortion compression operators and their bit accounting.
//!
//! Every operator maps `x ∈ ℝ^L` to a random reconstruction `C(x)` with
//! `E‖x − C(x)‖² ≤ β²‖x‖² + σ²`. The reconstruction is returned together with
//! the number of bits charged for transmitting it. Bit counts are real valued:
//! variable-rate codes are charged their idealized length in `log₂3` units.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cost of a scalar sent at full precision (single-precision float).
pub const DEFAULT_HIGH_PRECISION_BITS: u32 = 32;

/// `log₂ 3`, the cost of one ternary parsing symbol.
pub const LOG2_3: f64 = 1.584_962_500_721_156_2;

/// Declared distortion parameters of an operator for a given input length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistortionParams {
    /// Relative noise coefficient β².
    pub beta_sq: f64,
    /// Absolute noise term σ² (squared input units).
    pub sigma_sq: f64,
    /// `E[C(x)] = x` holds for every `x`.
    pub unbiased: bool,
}

impl DistortionParams {
    /// Right-hand side of the distortion bound for an input of squared norm `norm_sq`.
    pub fn bound(&self, norm_sq: f64) -> f64 {
        self.beta_sq * norm_sq + self.sigma_sq
    }
}

/// The reconstruction and its transmission cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub values: Vec<f64>,
    pub bits: f64,
    /// Integer level codes, for quantizers that emit them.
    pub levels: Option<Vec<i64>>,
}

/// Compression rule without the shared high-precision cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorKind {
    Identity,
    /// Probabilistic uniform (dithered) quantizer with step Δ.
    DitheredUniform { step: f64 },
    /// Probabilistic adaptive non-uniform quantizer. `omega = 0` degenerates
    /// to the dithered rule with step `eta`.
    Anq { omega: f64, eta: f64 },
    RandC {
        c: usize,
        #[serde(default)]
        unbiased: bool,
    },
    Gossip {
        q: f64,
        #[serde(default)]
        unbiased: bool,
    },
    Qsgd { s: u32 },
    TopCSparsifier { c: usize },
    /// Top-c sparsification followed by an inner operator and an `α` scale.
    TopCQuantizer {
        c: usize,
        inner: Box<OperatorKind>,
        /// Charge `c⌈log₂L⌉` location bits instead of one `log₂3` symbol per
        /// dropped zero (variable-rate inner operators only).
        #[serde(default)]
        location_coding: bool,
    },
}

/// A compression operator plus the bit cost of a full-precision scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    #[serde(flatten)]
    pub kind: OperatorKind,
    #[serde(default = "default_hp_bits")]
    pub high_precision_bits: u32,
}

fn default_hp_bits() -> u32 {
    DEFAULT_HIGH_PRECISION_BITS
}

impl From<OperatorKind> for OperatorSpec {
    fn from(kind: OperatorKind) -> Self {
        Self {
            kind,
            high_precision_bits: DEFAULT_HIGH_PRECISION_BITS,
        }
    }
}

impl OperatorSpec {
    pub fn identity() -> Self {
        OperatorKind::Identity.into()
    }

    /// Top-c magnitude selection followed by `inner`.
    pub fn top_c(c: usize, inner: OperatorKind) -> Self {
        OperatorKind::TopCQuantizer {
            c,
            inner: Box::new(inner),
            location_coding: false,
        }
        .into()
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.high_precision_bits == 0 {
            return Err(Error::config("operator.high_precision_bits", "must be ≥ 1"));
        }
        validate_kind(&self.kind, len, "operator")
    }

    pub fn compress<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<CompressedMessage> {
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("component {j} of compressor input is {}", x[j])));
        }
        self.validate(x.len())?;
        Ok(compress_kind(&self.kind, x, f64::from(self.high_precision_bits), rng))
    }

    pub fn declared_params(&self, len: usize) -> DistortionParams {
        declared_kind(&self.kind, len)
    }

    /// Output depends on the input only.
    pub fn is_deterministic(&self) -> bool {
        match &self.kind {
            OperatorKind::Identity | OperatorKind::TopCSparsifier { .. } => true,
            OperatorKind::TopCQuantizer { inner, .. } => {
                matches!(**inner, OperatorKind::Identity | OperatorKind::TopCSparsifier { .. })
            }
            _ => false,
        }
    }

    /// Replaces the resolution parameter (Δ for dithered, η for ANQ, also
    /// inside a top-c quantizer). Returns `None` for operators without one.
    pub fn with_resolution(&self, resolution: f64) -> Option<Self> {
        fn rewrite(kind: &OperatorKind, r: f64) -> Option<OperatorKind> {
            match kind {
                OperatorKind::DitheredUniform { .. } => Some(OperatorKind::DitheredUniform { step: r }),
                OperatorKind::Anq { omega, .. } => Some(OperatorKind::Anq { omega: *omega, eta: r }),
                OperatorKind::TopCQuantizer { c, inner, location_coding } => {
                    rewrite(inner, r).map(|inner| OperatorKind::TopCQuantizer {
                        c: *c,
                        inner: Box::new(inner),
                        location_coding: *location_coding,
                    })
                }
                _ => None,
            }
        }
        rewrite(&self.kind, resolution).map(|kind| Self {
            kind,
            high_precision_bits: self.high_precision_bits,
        })
    }
}

fn validate_kind(kind: &OperatorKind, len: usize, path: &str) -> Result<()> {
    let positive = |v: f64, field: &str| -> Result<()> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!("{path}.{field}"), format!("must be > 0, got {v}")))
        }
    };
    let keep = |c: usize| -> Result<()> {
        if c >= 1 && c <= len {
            Ok(())
        } else {
            Err(Error::config(format!("{path}.c"), format!("must satisfy 1 ≤ c ≤ {len}, got {c}")))
        }
    };
    match kind {
        OperatorKind::Identity => Ok(()),
        OperatorKind::DitheredUniform { step } => positive(*step, "step"),
        OperatorKind::Anq { omega, eta } => {
            if !(omega.is_finite() && *omega >= 0.0) {
                return Err(Error::config(format!("{path}.omega"), format!("must be ≥ 0, got {omega}")));
            }
            positive(*eta, "eta")
        }
        OperatorKind::RandC { c, .. } | OperatorKind::TopCSparsifier { c } => keep(*c),
        OperatorKind::Gossip { q, .. } => {
            if *q > 0.0 && *q <= 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.q"), format!("must lie in (0, 1], got {q}")))
            }
        }
        OperatorKind::Qsgd { s } => {
            if *s >= 1 {
                Ok(())
            } else {
                Err(Error::config(format!("{path}.s"), "must be ≥ 1"))
            }
        }
        OperatorKind::TopCQuantizer { c, inner, .. } => {
            keep(*c)?;
            let inner_path = format!("{path}.inner");
            if matches!(**inner, OperatorKind::TopCQuantizer { .. }) {
                return Err(Error::config(inner_path, "nested top-c quantizers are not supported"));
            }
            validate_kind(inner, len, &inner_path)?;
            let p = declared_kind(inner, len);
            if !p.unbiased && p.beta_sq > 1.0 {
                return Err(Error::config(
                    inner_path,
                    format!("biased inner operator needs β² ≤ 1, got {}", p.beta_sq),
                ));
            }
            Ok(())
        }
    }
}

fn declared_kind(kind: &OperatorKind, len: usize) -> DistortionParams {
    let l = len as f64;
    match kind {
        OperatorKind::Identity => DistortionParams { beta_sq: 0.0, sigma_sq: 0.0, unbiased: true },
        OperatorKind::DitheredUniform { step } => DistortionParams {
            beta_sq: 0.0,
            sigma_sq: l * step * step / 4.0,
            unbiased: true,
        },
        OperatorKind::Anq { omega, eta } => {
            if *omega == 0.0 {
                declared_kind(&OperatorKind::DitheredUniform { step: *eta }, len)
            } else {
                DistortionParams {
                    beta_sq: 2.0 * omega * omega,
                    sigma_sq: 2.0 * l * eta * eta,
                    unbiased: true,
                }
            }
        }
        OperatorKind::RandC { c, unbiased } => {
            let keep = *c as f64 / l;
            let alpha = if *unbiased { l / *c as f64 } else { 1.0 };
            DistortionParams { beta_sq: alpha * (1.0 - keep), sigma_sq: 0.0, unbiased: *unbiased }
        }
        OperatorKind::Gossip { q, unbiased } => {
            let alpha = if *unbiased { 1.0 / q } else { 1.0 };
            DistortionParams { beta_sq: alpha * (1.0 - q), sigma_sq: 0.0, unbiased: *unbiased }
        }
        OperatorKind::Qsgd { s } => {
            let s = f64::from(*s);
            DistortionParams {
                beta_sq: (l / (s * s)).min(l.sqrt() / s),
                sigma_sq: 0.0,
                unbiased: true,
            }
        }
        OperatorKind::TopCSparsifier { c } => DistortionParams {
            beta_sq: 1.0 - *c as f64 / l,
            sigma_sq: 0.0,
            unbiased: false,
        },
        OperatorKind::TopCQuantizer { c, inner, .. } => {
            let q = declared_kind(inner, len);
            let alpha = top_c_scale(&q);
            let keep = *c as f64 / l;
            let inner_loss = (1.0 - alpha).powi(2) + alpha * alpha * q.beta_sq;
            DistortionParams {
                beta_sq: 1.0 - keep * (1.0 - inner_loss),
                sigma_sq: alpha * alpha * q.sigma_sq,
                unbiased: false,
            }
        }
    }
}

/// `α = 1/(1+β_q²)` for unbiased inner operators, 1 otherwise.
fn top_c_scale(inner: &DistortionParams) -> f64 {
    if inner.unbiased {
        1.0 / (1.0 + inner.beta_sq)
    } else {
        1.0
    }
}

fn compress_kind<R: Rng + ?Sized>(
    kind: &OperatorKind,
    x: &[f64],
    hp_bits: f64,
    rng: &mut R,
) -> CompressedMessage {
    let l = x.len();
    match kind {
        OperatorKind::Identity => CompressedMessage {
            values: x.to_vec(),
            bits: l as f64 * hp_bits,
            levels: None,
        },
        OperatorKind::DitheredUniform { step } => {
            let (levels, values): (Vec<i64>, Vec<f64>) =
                x.iter().map(|&v| dithered_uniform(v, *step, rng)).unzip();
            CompressedMessage { bits: variable_rate_bits(&levels, 0), values, levels: Some(levels) }
        }
        OperatorKind::Anq { omega, eta } => {
            let (levels, values): (Vec<i64>, Vec<f64>) =
                x.iter().map(|&v| anq_quantize(v, *omega, *eta, rng)).unzip();
            CompressedMessage { bits: variable_rate_bits(&levels, 0), values, levels: Some(levels) }
        }
        OperatorKind::RandC { c, unbiased } => {
            let alpha = if *unbiased { l as f64 / *c as f64 } else { 1.0 };
            let mut values = vec![0.0; l];
            for j in index::sample(rng, l, *c) {
                values[j] = alpha * x[j];
            }
            CompressedMessage { values, bits: sparse_bits(*c, l, hp_bits), levels: None }
        }
        OperatorKind::Gossip { q, unbiased } => {
            if rng.random::<f64>() < *q {
                let alpha = if *unbiased { 1.0 / q } else { 1.0 };
                CompressedMessage {
                    values: x.iter().map(|v| alpha * v).collect(),
                    bits: l as f64 * hp_bits,
                    levels: None,
                }
            } else {
                CompressedMessage { values: vec![0.0; l], bits: 0.0, levels: None }
            }
        }
        OperatorKind::Qsgd { s } => qsgd(x, *s, hp_bits, rng),
        OperatorKind::TopCSparsifier { c } => {
            let mut values = vec![0.0; l];
            for j in top_c_indices(x, *c) {
                values[j] = x[j];
            }
            CompressedMessage { values, bits: sparse_bits(*c, l, hp_bits), levels: None }
        }
        OperatorKind::TopCQuantizer { c, inner, location_coding } => {
            let kept = top_c_indices(x, *c);
            let mut sparse = vec![0.0; l];
            for &j in &kept {
                sparse[j] = x[j];
            }
            let alpha = top_c_scale(&declared_kind(inner, l));
            let mut msg = compress_kind(inner, &sparse, hp_bits, rng);
            for v in &mut msg.values {
                *v *= alpha;
            }
            msg.bits = match (&**inner, &msg.levels) {
                // top-c with identity inner is the plain sparsifier
                (OperatorKind::Identity, _) => sparse_bits(*c, l, hp_bits),
                (OperatorKind::DitheredUniform { .. } | OperatorKind::Anq { .. }, Some(levels)) => {
                    let kept_levels: Vec<i64> = kept.iter().map(|&j| levels[j]).collect();
                    if *location_coding {
                        variable_rate_bits(&kept_levels, 0) + (*c as f64) * f64::from(ceil_log2(l as u64))
                    } else {
                        variable_rate_bits(&kept_levels, l - c)
                    }
                }
                _ => msg.bits,
            };
            msg
        }
    }
}

/// `c·B_HP + c⌈log₂L⌉`: `c` full-precision values plus their positions.
fn sparse_bits(c: usize, len: usize, hp_bits: f64) -> f64 {
    c as f64 * (hp_bits + f64::from(ceil_log2(len as u64)))
}

/// Indices of the `c` largest-magnitude entries; ties go to the lower index.
/// Returned in increasing index order.
pub fn top_c_indices(x: &[f64], c: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    let c = c.min(x.len());
    if c < x.len() {
        order.select_nth_unstable_by(c, |&a, &b| {
            x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b))
        });
    }
    order.truncate(c);
    order.sort_unstable();
    order
}

/// One draw of the dithered quantizer: level `n ∈ {m, m+1}` with
/// `m = ⌊x/Δ⌋` and `P(m+1) = x/Δ − m`, so that `E[nΔ] = x`.
pub fn dithered_uniform<R: Rng + ?Sized>(x: f64, step: f64, rng: &mut R) -> (i64, f64) {
    let scaled = x / step;
    let m = scaled.floor();
    let up = scaled - m;
    let n = if rng.random::<f64>() < up { m + 1.0 } else { m } as i64;
    (n, n as f64 * step)
}

/// Reconstruction point `y_m` of the ANQ lattice.
pub fn anq_level(m: i64, omega: f64, eta: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let base = omega + (1.0 + omega * omega).sqrt();
    let magnitude = (eta / omega) * (base.powi(2 * m.unsigned_abs() as i32) - 1.0);
    magnitude.copysign(m as f64)
}

/// One draw of the ANQ quantizer: `x` is randomly rounded to one of the two
/// lattice points around it so that `E[y_n] = x`.
pub fn anq_quantize<R: Rng + ?Sized>(x: f64, omega: f64, eta: f64, rng: &mut R) -> (i64, f64) {
    if omega == 0.0 {
        return dithered_uniform(x, eta, rng);
    }
    let base = omega + (1.0 + omega * omega).sqrt();
    let index = (1.0 + (omega / eta) * x.abs()).ln() / (2.0 * base.ln());
    let mut m = (index.copysign(x)).floor() as i64;
    // guard against rounding pushing x just outside [y_m, y_{m+1}]
    while anq_level(m, omega, eta) > x {
        m -= 1;
    }
    while anq_level(m + 1, omega, eta) < x {
        m += 1;
    }
    let (lo, hi) = (anq_level(m, omega, eta), anq_level(m + 1, omega, eta));
    let up = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    let n = if rng.random::<f64>() < up { m + 1 } else { m };
    (n, anq_level(n, omega, eta))
}

fn qsgd<R: Rng + ?Sized>(x: &[f64], s: u32, hp_bits: f64, rng: &mut R) -> CompressedMessage {
    let l = x.len();
    let bits = hp_bits + l as f64 + l as f64 * f64::from(ceil_log2(u64::from(s)));
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return CompressedMessage { values: vec![0.0; l], bits, levels: Some(vec![0; l]) };
    }
    let s_f = f64::from(s);
    let mut values = Vec::with_capacity(l);
    let mut levels = Vec::with_capacity(l);
    for &v in x {
        let r = s_f * v.abs() / norm;
        let m = r.floor();
        let n = if rng.random::<f64>() < r - m { m + 1.0 } else { m };
        values.push(norm * v.signum() * n / s_f);
        levels.push((n as i64) * if v < 0.0 { -1 } else { 1 });
    }
    CompressedMessage { values, bits, levels: Some(levels) }
}

/// `⌈log₂ v⌉` for `v ≥ 1`; zero maps to zero.
pub fn ceil_log2(v: u64) -> u32 {
    if v <= 1 {
        0
    } else {
        64 - (v - 1).leading_zeros()
    }
}

/// Variable-rate code length: `log₂3 · Σ_j (1 + ⌈log₂(|n_j|+1)⌉)` plus one
/// parsing symbol for each of `zeros_outside` additional zero entries.
pub fn variable_rate_bits(levels: &[i64], zeros_outside: usize) -> f64 {
    let symbols: u64 = levels
        .iter()
        .map(|n| 1 + u64::from(ceil_log2(n.unsigned_abs() + 1)))
        .sum();
    LOG2_3 * (symbols + zeros_outside as u64) as f64
}

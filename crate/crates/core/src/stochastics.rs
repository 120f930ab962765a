//! Environmental noise: generalized Cauchy GPS error on positions and
//! Weibull-distributed wind acting on the commanded motion.
//!
//! Every random source is a ChaCha stream keyed by `(seed, stream_id)`, so
//! draws depend only on the seed and the draw index within a stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

pub const WIND_SECTORS: usize = 12;
/// Truncation of the GPS error, in units of `sigma_z`.
pub const CAUCHY_TRUNCATION_SIGMAS: f64 = 50.0;
const MAX_REJECTIONS: usize = 1_000_000;

/// Independent random stream `stream_id` derived from `seed`.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CauchyCfg {
    /// Impulsiveness.
    pub k: f64,
    pub v: f64,
    pub sigma_z_sq: f64,
}

impl Default for CauchyCfg {
    fn default() -> Self {
        Self {
            k: 0.20,
            v: 40.0,
            sigma_z_sq: 0.22,
        }
    }
}

impl CauchyCfg {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, value) in [
            ("k", self.k),
            ("v", self.v),
            ("sigma_z_sq", self.sigma_z_sq),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    format!("{prefix}{name}"),
                    format!("must be positive, got {value}"),
                ));
            }
        }
        // sigma_z -> 0 collapses the density onto a point
        if self.sigma_z_sq < 1e-12 {
            return Err(Error::config(
                format!("{prefix}sigma_z_sq"),
                "too small for a usable density",
            ));
        }
        Ok(())
    }

    pub fn sigma_z(&self) -> f64 {
        self.sigma_z_sq.sqrt()
    }

    /// Scale `X = sqrt(sigma_z^2 * G(1/k) / G(3/k))`.
    pub fn scale(&self) -> f64 {
        let k = self.k;
        (self.sigma_z_sq * (ln_gamma(1.0 / k) - ln_gamma(3.0 / k)).exp()).sqrt()
    }

    /// Normalizer `Y = k v^(-1/k) G(v + 1/k) / (2 X G(v) G(1/k))`.
    pub fn peak(&self) -> f64 {
        let (k, v) = (self.k, self.v);
        let ln = k.ln() - v.ln() / k + ln_gamma(v + 1.0 / k) - ln_gamma(v) - ln_gamma(1.0 / k);
        ln.exp() / (2.0 * self.scale())
    }
}

/// Generalized Cauchy density `Y / (1 + (|z|/X)^k / v)^(v + 1/k)`.
pub fn cauchy_pdf(z: f64, cfg: &CauchyCfg) -> f64 {
    density(z, cfg.k, cfg.v, cfg.scale(), cfg.peak())
}

fn density(z: f64, k: f64, v: f64, x: f64, y: f64) -> f64 {
    y / (1.0 + (z.abs() / x).powf(k) / v).powf(v + 1.0 / k)
}

/// Rejection sampler for the truncated GPS error with a truncated Cauchy
/// envelope. The envelope width and bound are fitted numerically at
/// construction.
#[derive(Debug, Clone)]
pub struct CauchySampler {
    k: f64,
    v: f64,
    x: f64,
    y: f64,
    limit: f64,
    envelope_scale: f64,
    envelope_atan: f64,
    bound: f64,
}

impl CauchySampler {
    pub fn new(cfg: &CauchyCfg) -> Result<Self> {
        cfg.validate("noise.cauchy.")?;
        let (k, v, x, y) = (cfg.k, cfg.v, cfg.scale(), cfg.peak());
        let limit = CAUCHY_TRUNCATION_SIGMAS * cfg.sigma_z();
        // log-spaced probe points over the support, plus the origin
        let lo = (x * 1e-6).min(limit * 1e-9).ln();
        let hi = limit.ln();
        let probes: Vec<f64> = std::iter::once(0.0)
            .chain((0..=4000).map(|i| (lo + (hi - lo) * i as f64 / 4000.0).exp()))
            .collect();
        let ratio_bound = |s: f64| {
            let a = (limit / s).atan();
            probes
                .iter()
                .map(|&z| density(z, k, v, x, y) * 2.0 * a * (s * s + z * z) / s)
                .fold(0.0, f64::max)
        };
        let mut best = (f64::INFINITY, limit);
        for i in 0..=80 {
            let s = (lo + (hi - lo) * i as f64 / 80.0).exp();
            let m = ratio_bound(s);
            if m < best.0 {
                best = (m, s);
            }
        }
        let (bound, envelope_scale) = best;
        if !bound.is_finite() {
            return Err(Error::Numeric("could not fit a sampling envelope".into()));
        }
        Ok(Self {
            k,
            v,
            x,
            y,
            limit,
            envelope_scale,
            envelope_atan: (limit / envelope_scale).atan(),
            bound: bound * 1.1,
        })
    }

    /// Support half-width `50 sigma_z`.
    pub fn limit(&self) -> f64 {
        self.limit
    }

    /// Expected fraction of accepted proposals.
    pub fn acceptance_rate(&self) -> f64 {
        1.0 / self.bound
    }

    fn envelope_pdf(&self, z: f64) -> f64 {
        let s = self.envelope_scale;
        s / (2.0 * self.envelope_atan * (s * s + z * z))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        for _ in 0..MAX_REJECTIONS {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let z = self.envelope_scale * (u * self.envelope_atan).tan();
            let accept: f64 = rng.gen();
            if accept * self.bound * self.envelope_pdf(z)
                <= density(z, self.k, self.v, self.x, self.y)
            {
                return Ok(z);
            }
        }
        Err(Error::Numeric(format!(
            "GPS noise sampler rejected {MAX_REJECTIONS} proposals"
        )))
    }

    /// Independent offsets for the x and y axes.
    pub fn sample_offset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[f64; 2]> {
        Ok([self.sample(rng)?, self.sample(rng)?])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindCfg {
    pub shape: f64,
    pub scale_mps: f64,
    /// Probability of each 30-degree sector; sector `i` is centred on
    /// `30 i` degrees counter-clockwise from +x.
    pub direction_pmf: Vec<f64>,
}

impl Default for WindCfg {
    fn default() -> Self {
        Self {
            shape: 2.29,
            scale_mps: 10.97,
            direction_pmf: vec![1.0 / WIND_SECTORS as f64; WIND_SECTORS],
        }
    }
}

impl WindCfg {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        for (name, value) in [("shape", self.shape), ("scale_mps", self.scale_mps)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    format!("{prefix}{name}"),
                    format!("must be positive, got {value}"),
                ));
            }
        }
        let path = format!("{prefix}direction_pmf");
        if self.direction_pmf.len() != WIND_SECTORS {
            return Err(Error::config(
                path,
                format!(
                    "needs {WIND_SECTORS} entries, got {}",
                    self.direction_pmf.len()
                ),
            ));
        }
        if self
            .direction_pmf
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return Err(Error::config(path, "entries must be non-negative"));
        }
        let total: f64 = self.direction_pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                path,
                format!("must sum to 1, sums to {total}"),
            ));
        }
        Ok(())
    }

    /// Inverse Weibull CDF: `scale * (-ln(1 - u))^(1/shape)`.
    pub fn speed_at_quantile(&self, u: f64) -> f64 {
        self.scale_mps * (-(1.0 - u).ln()).powf(1.0 / self.shape)
    }

    pub fn mean_speed(&self) -> f64 {
        self.scale_mps * gamma(1.0 + 1.0 / self.shape)
    }

    pub fn speed_variance(&self) -> f64 {
        let g1 = gamma(1.0 + 1.0 / self.shape);
        self.scale_mps.powi(2) * (gamma(1.0 + 2.0 / self.shape) - g1 * g1)
    }

    pub fn sector_angle_rad(sector: usize) -> f64 {
        (sector as f64 * 360.0 / WIND_SECTORS as f64).to_radians()
    }

    pub fn sample_sector<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.direction_pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the cumulative sum: last non-empty sector
        self.direction_pmf
            .iter()
            .rposition(|p| *p > 0.0)
            .unwrap_or(WIND_SECTORS - 1)
    }

    /// Wind velocity in m/s: Weibull speed along a sampled sector centre.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let speed = self.speed_at_quantile(rng.gen());
        let angle = Self::sector_angle_rad(self.sample_sector(rng));
        [speed * angle.cos(), speed * angle.sin()]
    }
}

/// Noise block of the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseCfg {
    pub state_noise: bool,
    pub action_noise: bool,
    pub cauchy: CauchyCfg,
    pub wind: WindCfg,
}

impl NoiseCfg {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        self.cauchy.validate(&format!("{prefix}cauchy."))?;
        self.wind.validate(&format!("{prefix}wind."))
    }

    pub fn dual() -> Self {
        Self {
            state_noise: true,
            action_noise: true,
            ..Self::default()
        }
    }
}

/// Per-UAV noise realization for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseDraw {
    /// GPS error added to the reported position, meters.
    pub state_offset: [f64; 2],
    /// Wind velocity, m/s.
    pub wind_velocity: [f64; 2],
}

/// One agent's noise stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    cfg: NoiseCfg,
    gps: CauchySampler,
}

impl NoiseSource {
    pub fn new(cfg: &NoiseCfg, seed: u64, stream_id: u64) -> Result<Self> {
        cfg.validate("noise.")?;
        Ok(Self {
            rng: stream(seed, stream_id),
            cfg: cfg.clone(),
            gps: CauchySampler::new(&cfg.cauchy)?,
        })
    }

    pub fn draw(&mut self) -> Result<NoiseDraw> {
        let mut d = NoiseDraw::default();
        if self.cfg.state_noise {
            d.state_offset = self.gps.sample_offset(&mut self.rng)?;
        }
        if self.cfg.action_noise {
            d.wind_velocity = self.cfg.wind.sample(&mut self.rng);
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_is_even_and_peaks_at_zero() {
        let cfg = CauchyCfg::default();
        for z in [0.1, 0.5, 2.0] {
            assert_eq!(cauchy_pdf(z, &cfg), cauchy_pdf(-z, &cfg));
            assert!(cauchy_pdf(z, &cfg) < cauchy_pdf(0.0, &cfg));
        }
        assert_eq!(cauchy_pdf(0.0, &cfg), cfg.peak());
    }

    #[test]
    fn degenerate_cauchy_rejected() {
        let cfg = CauchyCfg {
            sigma_z_sq: 0.0,
            ..CauchyCfg::default()
        };
        assert!(matches!(cfg.validate(""), Err(Error::Config { .. })));
        assert!(CauchySampler::new(&CauchyCfg {
            sigma_z_sq: 1e-300,
            ..CauchyCfg::default()
        })
        .is_err());
        assert!(CauchySampler::new(&CauchyCfg {
            k: -1.0,
            ..CauchyCfg::default()
        })
        .is_err());
    }

    #[test]
    fn sampler_is_reproducible_and_truncated() {
        let s = CauchySampler::new(&CauchyCfg::default()).unwrap();
        let a: Vec<f64> = {
            let mut r = stream(7, 3);
            (0..100).map(|_| s.sample(&mut r).unwrap()).collect()
        };
        let b: Vec<f64> = {
            let mut r = stream(7, 3);
            (0..100).map(|_| s.sample(&mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
        assert!(a.iter().all(|z| z.abs() <= s.limit()));
        assert!(s.acceptance_rate() >= 0.01, "{}", s.acceptance_rate());
    }

    #[test]
    fn weibull_quantile_at_scale() {
        let w = WindCfg::default();
        let u = 1.0 - (-1.0f64).exp();
        assert!((w.speed_at_quantile(u) - w.scale_mps).abs() < 1e-12);
        assert!((w.mean_speed() - 9.718).abs() < 1e-3);
        assert_eq!(w.speed_at_quantile(0.0), 0.0);
    }

    #[test]
    fn wind_cfg_validation() {
        let mut w = WindCfg::default();
        assert!(w.validate("").is_ok());
        w.direction_pmf[0] += 0.1;
        assert!(w.validate("noise.wind.").is_err());
        let w = WindCfg {
            direction_pmf: vec![0.5; 2],
            ..WindCfg::default()
        };
        assert!(w.validate("").is_err());
    }

    #[test]
    fn one_hot_direction() {
        let mut pmf = vec![0.0; WIND_SECTORS];
        pmf[3] = 1.0;
        let w = WindCfg {
            direction_pmf: pmf,
            ..WindCfg::default()
        };
        let mut r = stream(1, 0);
        for _ in 0..50 {
            let [vx, vy] = w.sample(&mut r);
            // sector 3 is +y
            assert!(vx.abs() < 1e-9 * (1.0 + vy.abs()));
            assert!(vy >= 0.0);
        }
    }

    #[test]
    fn streams_differ() {
        let a: u64 = stream(1, 0).gen();
        let b: u64 = stream(1, 1).gen();
        assert_ne!(a, b);
    }

    #[test]
    fn disabled_noise_draws_zero() {
        let mut src = NoiseSource::new(&NoiseCfg::default(), 3, 1).unwrap();
        assert_eq!(src.draw().unwrap(), NoiseDraw::default());
        let mut src = NoiseSource::new(&NoiseCfg::dual(), 3, 1).unwrap();
        let d = src.draw().unwrap();
        assert_ne!(d.wind_velocity, [0.0, 0.0]);
    }
}

use proptest::prelude::*;
use qmarl_core::stochastics::{
    cauchy_pdf, stream, CauchyCfg, CauchySampler, NoiseCfg, NoiseSource, WindCfg,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::gamma;

/// Trapezoid CDF of the density on `[0, z]` over a log grid, so the cusp
/// at the origin costs nothing. Returns `(grid, cumulative mass)`.
fn half_cdf(cfg: &CauchyCfg, upper: f64, points: usize) -> (Vec<f64>, Vec<f64>) {
    let lo = 1e-12f64.ln();
    let hi = upper.ln();
    let du = (hi - lo) / points as f64;
    let z0 = lo.exp();
    // mass on [0, z0] with the density taken as flat there
    let mut acc = cauchy_pdf(0.0, cfg) * z0;
    let mut grid = vec![z0];
    let mut cdf = vec![acc];
    let mut prev = cauchy_pdf(z0, cfg) * z0;
    for i in 1..=points {
        let z = (lo + du * i as f64).exp();
        let cur = cauchy_pdf(z, cfg) * z;
        acc += 0.5 * (prev + cur) * du;
        grid.push(z);
        cdf.push(acc);
        prev = cur;
    }
    (grid, cdf)
}

fn interpolate(grid: &[f64], cdf: &[f64], z: f64) -> f64 {
    match grid.binary_search_by(|g| g.partial_cmp(&z).unwrap()) {
        Ok(i) => cdf[i],
        Err(0) => cdf[0] * z / grid[0],
        Err(i) if i == grid.len() => cdf[cdf.len() - 1],
        Err(i) => {
            let t = (z - grid[i - 1]) / (grid[i] - grid[i - 1]);
            cdf[i - 1] + t * (cdf[i] - cdf[i - 1])
        }
    }
}

#[test]
fn density_integrates_to_one() {
    let cfg = CauchyCfg::default();
    let (_, cdf) = half_cdf(&cfg, 1e12, 400_000);
    let total = 2.0 * cdf[cdf.len() - 1];
    assert!((total - 1.0).abs() < 1e-3, "total mass {total}");
}

#[test]
fn density_integrates_to_one_for_other_shapes() {
    for (k, v) in [(0.5, 5.0), (1.0, 2.0), (2.0, 10.0)] {
        let cfg = CauchyCfg {
            k,
            v,
            sigma_z_sq: 0.5,
        };
        let (_, cdf) = half_cdf(&cfg, 1e9, 200_000);
        let total = 2.0 * cdf[cdf.len() - 1];
        assert!((total - 1.0).abs() < 1e-3, "k={k} v={v}: {total}");
    }
}

/// Chi-square goodness of fit over `bins` equal-probability bins of the
/// truncated density. Returns the statistic.
fn cauchy_chi_square(samples: usize, bins: usize, seed: u64) -> f64 {
    let cfg = CauchyCfg::default();
    let sampler = CauchySampler::new(&cfg).unwrap();
    let (grid, cdf) = half_cdf(&cfg, sampler.limit(), 200_000);
    let half_mass = cdf[cdf.len() - 1];
    let per_side = bins / 2;
    let mut counts = vec![0usize; bins];
    let mut rng = stream(seed, 7);
    for _ in 0..samples {
        let z = sampler.sample(&mut rng).unwrap();
        let f = interpolate(&grid, &cdf, z.abs()) / half_mass;
        let b = ((f * per_side as f64) as usize).min(per_side - 1);
        counts[if z < 0.0 {
            per_side - 1 - b
        } else {
            per_side + b
        }] += 1;
    }
    let expected = samples as f64 / bins as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

#[test]
fn cauchy_sampler_fits_density() {
    let stat = cauchy_chi_square(200_000, 40, 3);
    let critical = ChiSquared::new(39.0).unwrap().inverse_cdf(0.99);
    assert!((critical - 62.43).abs() < 0.01);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn cauchy_sampler_stays_inside_truncation() {
    let sampler = CauchySampler::new(&CauchyCfg::default()).unwrap();
    assert!(sampler.acceptance_rate() >= 0.01);
    let mut rng = stream(9, 0);
    for _ in 0..50_000 {
        assert!(sampler.sample(&mut rng).unwrap().abs() <= sampler.limit());
    }
}

fn weibull_moments(cfg: &WindCfg, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed, 1);
    let speeds: Vec<f64> = (0..n)
        .map(|_| {
            let [x, y] = cfg.sample(&mut rng);
            x.hypot(y)
        })
        .collect();
    let mean = speeds.iter().sum::<f64>() / n as f64;
    let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

#[test]
fn wind_speed_moments() {
    let cfg = WindCfg::default();
    let mean_oracle = 10.97 * gamma(1.0 + 1.0 / 2.29);
    assert!((mean_oracle - 9.718).abs() < 1e-3);
    let var_oracle = 10.97f64.powi(2) * (gamma(1.0 + 2.0 / 2.29) - gamma(1.0 + 1.0 / 2.29).powi(2));
    let (mean, var) = weibull_moments(&cfg, 200_000, 4);
    assert!((mean / mean_oracle - 1.0).abs() < 0.02, "mean {mean}");
    assert!((var / var_oracle - 1.0).abs() < 0.03, "variance {var}");
}

#[test]
fn wind_directions_follow_pmf() {
    let mut pmf = [0.0; 12];
    pmf[2] = 0.75;
    pmf[7] = 0.25;
    let cfg = WindCfg {
        direction_pmf: pmf.to_vec(),
        ..WindCfg::default()
    };
    let mut rng = stream(5, 2);
    let n = 100_000;
    let hits = (0..n).filter(|_| cfg.sample_sector(&mut rng) == 2).count();
    assert!((hits as f64 / n as f64 - 0.75).abs() < 0.01);
}

proptest! {
    #[test]
    fn noise_streams_are_reproducible(seed in 0u64..1000, id in 0u64..300) {
        let cfg = NoiseCfg::dual();
        let mut a = NoiseSource::new(&cfg, seed, id).unwrap();
        let mut b = NoiseSource::new(&cfg, seed, id).unwrap();
        for _ in 0..5 {
            prop_assert_eq!(a.draw().unwrap(), b.draw().unwrap());
        }
    }

    #[test]
    fn weibull_quantile_is_monotone(u1 in 0.0..1.0f64, u2 in 0.0..1.0f64) {
        let cfg = WindCfg::default();
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        prop_assert!(cfg.speed_at_quantile(lo) <= cfg.speed_at_quantile(hi));
        prop_assert!(cfg.speed_at_quantile(lo) >= 0.0);
    }

    #[test]
    fn density_is_even_and_decreasing(z in 0.0..30.0f64, dz in 0.0..5.0f64) {
        let cfg = CauchyCfg::default();
        prop_assert_eq!(cauchy_pdf(z, &cfg), cauchy_pdf(-z, &cfg));
        prop_assert!(cauchy_pdf(z + dz, &cfg) <= cauchy_pdf(z, &cfg));
    }
}

//! 60 GHz link budget: IEEE 802.11ad path loss, the ITU Gaussian antenna
//! pattern, interference, noise floor, Shannon capacity and MCS rates.
//!
//! Powers are in dBm unless a name ends in `_mw`; gains in dBi; angles in
//! degrees; distances in meters.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub carrier_ghz: f64,
    pub pathloss_exponent: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub hpbw_azimuth_deg: f64,
    pub hpbw_elevation_deg: f64,
    pub noise_psd_dbm_per_hz: f64,
    /// Implementation loss plus receiver noise figure.
    pub extra_loss_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_ghz: 60.0,
            pathloss_exponent: 2.0,
            bandwidth_hz: 2.16e9,
            tx_power_dbm: 24.0,
            tx_gain_dbi: 19.0,
            rx_gain_dbi: 3.0,
            hpbw_azimuth_deg: 10.0,
            hpbw_elevation_deg: 10.0,
            noise_psd_dbm_per_hz: -174.0,
            extra_loss_db: 15.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let positive = [
            ("carrier_ghz", self.carrier_ghz),
            ("pathloss_exponent", self.pathloss_exponent),
            ("bandwidth_hz", self.bandwidth_hz),
            ("hpbw_azimuth_deg", self.hpbw_azimuth_deg),
            ("hpbw_elevation_deg", self.hpbw_elevation_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("{prefix}{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        let finite = [
            ("tx_power_dbm", self.tx_power_dbm),
            ("tx_gain_dbi", self.tx_gain_dbi),
            ("rx_gain_dbi", self.rx_gain_dbi),
            ("noise_psd_dbm_per_hz", self.noise_psd_dbm_per_hz),
            ("extra_loss_db", self.extra_loss_db),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::config(format!("{prefix}{name}"), "must be finite"));
            }
        }
        if self.extra_loss_db < 0.0 {
            return Err(Error::config(
                format!("{prefix}extra_loss_db"),
                "must be non-negative",
            ));
        }
        Ok(())
    }

    /// Transmit power plus transmit antenna gain.
    pub fn eirp_dbm(&self) -> f64 {
        self.tx_power_dbm + self.tx_gain_dbi
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn path_loss_db(d_m: f64, params: &ChannelParams) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs a positive distance, got {d_m}"
        )));
    }
    Ok(32.5 + 20.0 * params.carrier_ghz.log10() + 10.0 * params.pathloss_exponent * d_m.log10())
}

/// Normalized angular offset `Delta` of the Gaussian pattern; 0 at boresight.
pub fn pattern_delta(phi_deg: f64, theta_deg: f64, params: &ChannelParams) -> f64 {
    let (phi, theta) = (phi_deg.to_radians(), theta_deg.to_radians());
    let off_axis = (phi.cos() * theta.cos())
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees();
    if off_axis == 0.0 {
        return 0.0;
    }
    let psi = theta.tan().atan2(phi.sin());
    let spread = ((psi.cos() / params.hpbw_azimuth_deg).powi(2)
        + (psi.sin() / params.hpbw_elevation_deg).powi(2))
    .sqrt();
    (off_axis * spread).abs()
}

/// Pattern gain as a function of `Delta`.
pub fn gain_from_delta(delta: f64, max_gain_dbi: f64) -> f64 {
    if delta < 1.0 {
        max_gain_dbi - 12.0 * delta * delta
    } else {
        max_gain_dbi - 12.0 - 15.0 * delta.ln()
    }
}

/// Transmit antenna gain at azimuth/elevation offsets from boresight.
pub fn antenna_gain_dbi(phi_deg: f64, theta_deg: f64, params: &ChannelParams) -> Result<f64> {
    if !(-180.0..=180.0).contains(&phi_deg) || !(-90.0..=90.0).contains(&theta_deg) {
        return Err(Error::Domain(format!(
            "angles out of range: phi={phi_deg}, theta={theta_deg}"
        )));
    }
    Ok(gain_from_delta(
        pattern_delta(phi_deg, theta_deg, params),
        params.tx_gain_dbi,
    ))
}

/// Received power for a boresight-aligned link: `EIRP - L(d) + G_rx`.
pub fn rx_power_dbm(d_m: f64, params: &ChannelParams) -> Result<f64> {
    Ok(params.eirp_dbm() - path_loss_db(d_m, params)? + params.rx_gain_dbi)
}

/// Received power when the receiver sits at `(phi, theta)` off the
/// transmitter's boresight.
pub fn rx_power_off_axis_dbm(
    d_m: f64,
    phi_deg: f64,
    theta_deg: f64,
    params: &ChannelParams,
) -> Result<f64> {
    Ok(
        antenna_gain_dbi(phi_deg, theta_deg, params)? + params.tx_power_dbm
            - path_loss_db(d_m, params)?
            + params.rx_gain_dbi,
    )
}

pub fn noise_floor_dbm(params: &ChannelParams) -> f64 {
    params.noise_psd_dbm_per_hz + 10.0 * params.bandwidth_hz.log10() + params.extra_loss_db
}

pub fn noise_floor_mw(params: &ChannelParams) -> f64 {
    dbm_to_mw(noise_floor_dbm(params))
}

/// A directional link; the transmitter's beam points at its own receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub tx: [f64; 3],
    pub rx: [f64; 3],
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn az_el(v: [f64; 3]) -> (f64, f64) {
    let az = v[1].atan2(v[0]).to_degrees();
    let el = v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt()).to_degrees();
    (az, el)
}

fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 {
        180.0
    } else {
        w
    }
}

impl Link {
    pub fn length(&self) -> f64 {
        norm(sub(self.rx, self.tx))
    }

    /// Distance and `(phi, theta)` offsets from this link's boresight to `point`.
    pub fn offsets_to(&self, point: [f64; 3]) -> Result<(f64, f64, f64)> {
        let beam = sub(self.rx, self.tx);
        let toward = sub(point, self.tx);
        let d = norm(toward);
        if d == 0.0 || norm(beam) == 0.0 {
            return Err(Error::Domain(
                "degenerate geometry: coincident transmitter and receiver".into(),
            ));
        }
        let (az_b, el_b) = az_el(beam);
        let (az_t, el_t) = az_el(toward);
        let phi = wrap_degrees(az_t - az_b);
        let theta = (el_t - el_b).clamp(-90.0, 90.0);
        Ok((d, phi, theta))
    }
}

/// Aggregate interference at `target.rx` from every other active link.
/// Each term is `G_tx(offsets) + P_tx - L(d)`; no receive gain is applied.
pub fn interference_mw(target: &Link, interferers: &[Link], params: &ChannelParams) -> Result<f64> {
    let mut total = 0.0;
    for link in interferers {
        let (d, phi, theta) = link.offsets_to(target.rx)?;
        let dbm =
            antenna_gain_dbi(phi, theta, params)? + params.tx_power_dbm - path_loss_db(d, params)?;
        total += dbm_to_mw(dbm);
    }
    Ok(total)
}

/// `BW * log2(1 + P_rx / (noise + interference))` in bits per second.
pub fn shannon_capacity_bps(
    rx_mw: f64,
    interference_mw: f64,
    noise_mw: f64,
    params: &ChannelParams,
) -> Result<f64> {
    let denom = noise_mw + interference_mw;
    if !(denom > 0.0) {
        return Err(Error::Domain(format!(
            "noise plus interference must be positive, got {denom}"
        )));
    }
    Ok(params.bandwidth_hz * (1.0 + rx_mw / denom).log2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsRow {
    pub sensitivity_dbm: f64,
    pub mcs: String,
    pub rate_mbps: f64,
    /// Reference column only; not recomputed.
    pub shannon_gbps: f64,
}

const DEFAULT_ROWS: [(f64, &str, f64, f64); 12] = [
    (-78.0, "MCS0", 27.5, 1.43),
    (-68.0, "MCS1", 385.0, 2.04),
    (-66.0, "MCS2", 770.0, 2.40),
    (-65.0, "MCS3", 962.5, 2.81),
    (-64.0, "MCS4", 1155.0, 3.25),
    (-63.0, "MCS6", 1540.0, 3.74),
    (-62.0, "MCS7", 1925.0, 4.25),
    (-61.0, "MCS8", 2310.0, 5.38),
    (-59.0, "MCS9", 2502.5, 7.90),
    (-55.0, "MCS10", 3080.0, 8.57),
    (-54.0, "MCS11", 3850.0, 9.23),
    (-53.0, "MCS12", 4620.0, 43.48),
];

/// The bundled CSV copy of the table.
pub const MCS_TABLE_CSV: &str = include_str!("../data/mcs_802_11ad.csv");

/// Receiver-sensitivity to data-rate lookup, sorted by sensitivity.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    rows: Vec<McsRow>,
}

impl Default for McsTable {
    fn default() -> Self {
        Self {
            rows: DEFAULT_ROWS
                .iter()
                .map(|&(s, m, r, c)| McsRow {
                    sensitivity_dbm: s,
                    mcs: m.to_string(),
                    rate_mbps: r,
                    shannon_gbps: c,
                })
                .collect(),
        }
    }
}

impl McsTable {
    pub fn new(rows: Vec<McsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Load("MCS table is empty".into()));
        }
        for w in rows.windows(2) {
            if !(w[0].sensitivity_dbm < w[1].sensitivity_dbm && w[0].rate_mbps < w[1].rate_mbps) {
                return Err(Error::Load(format!(
                    "MCS rows must ascend in sensitivity and rate: {} then {}",
                    w[0].mcs, w[1].mcs
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<McsRow>, _>>()
            .map_err(|e| Error::Load(e.to_string()))?;
        Self::new(rows)
    }

    /// Writes the table in the bundled CSV layout.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "sensitivity_dbm,mcs,rate_mbps,shannon_gbps")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.2}",
                r.sensitivity_dbm, r.mcs, r.rate_mbps, r.shannon_gbps
            )?;
        }
        Ok(())
    }

    pub fn rows(&self) -> &[McsRow] {
        &self.rows
    }

    pub fn min_sensitivity_dbm(&self) -> f64 {
        self.rows[0].sensitivity_dbm
    }

    /// Row with the highest sensitivity not above `rx_dbm`, if any.
    pub fn select(&self, rx_dbm: f64) -> Option<&McsRow> {
        self.rows.iter().rev().find(|r| r.sensitivity_dbm <= rx_dbm)
    }

    /// Supportable rate, or 0 when the receiver is below every threshold.
    pub fn rate_mbps(&self, rx_dbm: f64) -> f64 {
        self.select(rx_dbm).map_or(0.0, |r| r.rate_mbps)
    }

    /// Largest boresight distance at which `row` is still decodable.
    pub fn coverage_radius_m(&self, row: usize, params: &ChannelParams) -> Result<f64> {
        let r = self
            .rows
            .get(row)
            .ok_or_else(|| Error::Usage(format!("no MCS row {row}")))?;
        coverage_radius_m(r.sensitivity_dbm, params)
    }
}

/// Closed-form inversion of the boresight link budget, nudged to the largest
/// float distance whose received power still meets `sensitivity_dbm`.
pub fn coverage_radius_m(sensitivity_dbm: f64, params: &ChannelParams) -> Result<f64> {
    let max_loss = params.eirp_dbm() + params.rx_gain_dbi - sensitivity_dbm;
    let exponent =
        (max_loss - 32.5 - 20.0 * params.carrier_ghz.log10()) / (10.0 * params.pathloss_exponent);
    let mut d = 10f64.powf(exponent);
    while rx_power_dbm(d, params)? < sensitivity_dbm {
        d = d.next_down();
    }
    while rx_power_dbm(d.next_up(), params)? >= sensitivity_dbm {
        d = d.next_up();
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn p() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn eirp_is_43_dbm() {
        assert_eq!(p().eirp_dbm(), 43.0);
    }

    #[test]
    fn path_loss_values() {
        assert!((path_loss_db(1.0, &p()).unwrap() - 68.063).abs() < 1e-3);
        assert!((path_loss_db(100.0, &p()).unwrap() - 108.063).abs() < 1e-3);
        let decade = path_loss_db(100.0, &p()).unwrap() - path_loss_db(10.0, &p()).unwrap();
        assert!((decade - 20.0).abs() < 1e-12);
        assert!(matches!(path_loss_db(0.0, &p()), Err(Error::Domain(_))));
        assert!(path_loss_db(-3.0, &p()).is_err());
    }

    #[test]
    fn antenna_pattern_branches() {
        assert_eq!(antenna_gain_dbi(0.0, 0.0, &p()).unwrap(), 19.0);
        assert!((gain_from_delta(1.0 - 1e-12, 19.0) - 7.0).abs() < 1e-9);
        assert_eq!(gain_from_delta(1.0, 19.0), 7.0);
        assert!((gain_from_delta(E, 19.0) - (19.0 - 27.0)).abs() < 1e-12);
        // with equal beamwidths Delta is the off-axis angle over the beamwidth
        let g = antenna_gain_dbi(10.0 * E, 0.0, &p()).unwrap();
        assert!((g - (19.0 - 27.0)).abs() < 1e-9);
        assert!(antenna_gain_dbi(181.0, 0.0, &p()).is_err());
        assert!(antenna_gain_dbi(0.0, -91.0, &p()).is_err());
    }

    #[test]
    fn received_power() {
        assert!((rx_power_dbm(1.0, &p()).unwrap() + 22.063).abs() < 1e-3);
        let slope = rx_power_dbm(50.0, &p()).unwrap() - rx_power_dbm(5.0, &p()).unwrap();
        assert!((slope + 20.0).abs() < 1e-12);
        assert!((rx_power_dbm(626.0, &p()).unwrap() + 78.0).abs() < 0.02);
        let on = rx_power_off_axis_dbm(10.0, 0.0, 0.0, &p()).unwrap();
        assert_eq!(on, rx_power_dbm(10.0, &p()).unwrap());
    }

    #[test]
    fn noise_floor() {
        assert!((noise_floor_dbm(&p()) + 65.655).abs() < 0.01);
        let half = ChannelParams {
            bandwidth_hz: 1.08e9,
            ..p()
        };
        assert!((noise_floor_dbm(&p()) - noise_floor_dbm(&half) - 3.0103).abs() < 1e-4);
        let lossless = ChannelParams {
            extra_loss_db: 0.0,
            ..p()
        };
        assert!((noise_floor_dbm(&lossless) + 80.655).abs() < 0.01);
    }

    #[test]
    fn interference_terms() {
        let target = Link {
            tx: [100.0, 0.0, 0.0],
            rx: [0.0, 0.0, 0.0],
        };
        assert_eq!(interference_mw(&target, &[], &p()).unwrap(), 0.0);
        let near = Link {
            tx: [-1.0, 0.0, 0.0],
            rx: [-2.0, 0.0, 0.0],
        };
        // interferer at 1 m pointing straight at the victim: 19 + 24 - 68.063
        let near_aimed = Link {
            tx: [-1.0, 0.0, 0.0],
            rx: [5.0, 0.0, 0.0],
        };
        let i = interference_mw(&target, &[near_aimed], &p()).unwrap();
        let expected = dbm_to_mw(43.0 - path_loss_db(1.0, &p()).unwrap());
        assert!((i - expected).abs() < 1e-12 * expected);
        // pointing away costs the back-lobe
        assert!(interference_mw(&target, &[near], &p()).unwrap() < i);
        let far_aimed = Link {
            tx: [-2.0, 0.0, 0.0],
            rx: [5.0, 0.0, 0.0],
        };
        let i2 = interference_mw(&target, &[far_aimed], &p()).unwrap();
        assert!((i / i2 - 4.0).abs() < 1e-9);
        let degenerate = Link {
            tx: [0.0, 0.0, 0.0],
            rx: [1.0, 0.0, 0.0],
        };
        assert!(matches!(
            interference_mw(&target, &[degenerate], &p()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn shannon_edges() {
        let n = noise_floor_mw(&p());
        let c = shannon_capacity_bps(n, 0.0, n, &p()).unwrap();
        assert!((c - 2.16e9).abs() < 1e-3);
        assert_eq!(shannon_capacity_bps(0.0, 0.0, n, &p()).unwrap(), 0.0);
        assert!(shannon_capacity_bps(1.0, 0.0, 0.0, &p()).is_err());
    }

    #[test]
    fn mcs_lookup() {
        let t = McsTable::default();
        assert_eq!(t.rate_mbps(-53.0), 4620.0);
        assert_eq!(t.rate_mbps(-78.0), 27.5);
        assert_eq!(t.rate_mbps(-79.0), 0.0);
        assert_eq!(t.rate_mbps(-60.0), 2310.0);
        assert_eq!(t.select(-60.0).unwrap().mcs, "MCS8");
        assert_eq!(t.rate_mbps(-10.0), 4620.0);
    }

    #[test]
    fn coverage_radii() {
        let t = McsTable::default();
        let r0 = t.coverage_radius_m(0, &p()).unwrap();
        let r12 = t.coverage_radius_m(11, &p()).unwrap();
        assert!((r0 - 626.0).abs() < 1.0, "{r0}");
        assert!((r12 - 35.0).abs() < 0.5, "{r12}");
        let radii: Vec<f64> = (0..12)
            .map(|k| t.coverage_radius_m(k, &p()).unwrap())
            .collect();
        assert!(radii.windows(2).all(|w| w[0] > w[1]));
        assert!(t.coverage_radius_m(12, &p()).is_err());
    }

    #[test]
    fn csv_matches_embedded_table() {
        let parsed = McsTable::from_csv(MCS_TABLE_CSV.as_bytes()).unwrap();
        assert_eq!(parsed, McsTable::default());
        let mut out = Vec::new();
        McsTable::default().write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), MCS_TABLE_CSV);
    }

    #[test]
    fn unordered_table_rejected() {
        let mut rows = McsTable::default().rows().to_vec();
        rows.swap(2, 3);
        assert!(matches!(McsTable::new(rows), Err(Error::Load(_))));
    }
}

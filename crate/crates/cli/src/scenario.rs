//! Scenario files: TOML with unit-suffixed keys.

use std::ops::Range;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use isac_coop::estimator::{CoarseSettings, RoiGrid};
use isac_coop::harness::{ExperimentPlan, Scenario};
use isac_coop::otfs::OtfsParams;
use isac_coop::scene::{design_sector_beamformer, BsSite, TargetState, Vec2};
use serde::Deserialize;
use toml::Spanned;

/// Name that selects the bundled Table I scenario instead of a file.
pub const BUNDLED_NAME: &str = "@table1";
pub const BUNDLED_TABLE_ONE: &str = include_str!("../scenarios/table1.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    otfs: Option<Spanned<RawOtfs>>,
    beamformer: Option<Spanned<RawBeamformer>>,
    bs: Option<Vec<Spanned<RawBs>>>,
    target: Option<Spanned<RawTarget>>,
    roi: Option<Spanned<RawRoi>>,
    coarse: Option<Spanned<RawCoarse>>,
    mc: Option<Spanned<RawMc>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOtfs {
    m: usize,
    n: usize,
    delta_f_hz: f64,
    t_s: f64,
    f_c_hz: f64,
    n_tx: usize,
    n_rx: usize,
    p_t_dbm: f64,
    n0_w_per_hz: f64,
    antenna_gain: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeamformer {
    center_deg: f64,
    width_deg: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBs {
    x_m: f64,
    y_m: f64,
    rotation_rad: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    x_m: f64,
    y_m: f64,
    vx_mps: f64,
    vy_mps: f64,
    rcs_m2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoi {
    x_min_m: f64,
    x_max_m: f64,
    y_min_m: f64,
    y_max_m: f64,
    dx_m: f64,
    dy_m: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoarse {
    c_fdopp: f64,
    c_tau: f64,
    c_phi: f64,
    beamwidth_rad: Option<f64>,
    f_d_min_hz: Option<f64>,
    f_d_max_hz: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    n_trials: usize,
    seed: u64,
    waypoints_m: Vec<[f64; 2]>,
    /// One-based BS numbers.
    bs_subsets: Vec<Vec<usize>>,
}

/// Parsed and validated scenario file.
#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub n_trials: usize,
    pub seed: u64,
    pub waypoints: Vec<Vec2>,
    /// Zero-based BS indices.
    pub subsets: Vec<Vec<usize>>,
}

/// Run-time overrides from the command line.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Shrink factor in (0, 1] for M, N, the trial count and the pixel count.
    pub scale: Option<f64>,
}

fn line_of(src: &str, span: Range<usize>) -> usize {
    src[..span.start.min(src.len())].matches('\n').count() + 1
}

fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn scaled_count(v: usize, s: f64) -> usize {
    ((v as f64 * s).round() as usize).max(1)
}

impl ScenarioFile {
    pub fn load(path: &str, overrides: Overrides) -> Result<Self> {
        if path == BUNDLED_NAME {
            return Self::parse(BUNDLED_TABLE_ONE, BUNDLED_NAME, overrides);
        }
        let src = std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading scenario {path}"))?;
        Self::parse(&src, path, overrides)
    }

    pub fn parse(src: &str, origin: &str, overrides: Overrides) -> Result<Self> {
        let raw: RawFile = toml::from_str(src).map_err(|e| anyhow!("{origin}: {e}"))?;
        let at = |name: &str, span: Range<usize>| format!("{origin}:{}: [{name}]", line_of(src, span));
        let missing = |name: &str| anyhow!("{origin}: missing [{name}] section");

        let scale = overrides.scale.unwrap_or(1.0);
        if !(scale > 0.0 && scale <= 1.0) {
            bail!("--scale must lie in (0, 1], got {scale}");
        }

        let otfs = raw.otfs.ok_or_else(|| missing("otfs"))?;
        let o = otfs.get_ref();
        let params = OtfsParams::new(
            scaled_count(o.m, scale),
            scaled_count(o.n, scale),
            o.delta_f_hz,
            o.t_s,
            o.f_c_hz,
            o.n_tx,
            o.n_rx,
            dbm_to_w(o.p_t_dbm),
            o.n0_w_per_hz,
            o.antenna_gain,
        )
        .map_err(|e| anyhow!("{}: {e}", at("otfs", otfs.span())))?;

        let bf = raw.beamformer.ok_or_else(|| missing("beamformer"))?;
        let beamformer = design_sector_beamformer(
            &params,
            bf.get_ref().center_deg.to_radians(),
            bf.get_ref().width_deg.to_radians(),
        )
        .map_err(|e| anyhow!("{}: {e}", at("beamformer", bf.span())))?;

        let stations = raw.bs.ok_or_else(|| missing("bs"))?;
        if stations.is_empty() {
            return Err(missing("bs"));
        }
        let mut sites = Vec::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            let b = s.get_ref();
            if ![b.x_m, b.y_m, b.rotation_rad].iter().all(|v| v.is_finite()) {
                bail!("{}: BS {} has a non-finite coordinate", at("bs", s.span()), i + 1);
            }
            sites.push(BsSite::new(i, Vec2::new(b.x_m, b.y_m), b.rotation_rad));
        }

        let tgt = raw.target.ok_or_else(|| missing("target"))?;
        let t = tgt.get_ref();
        let target = TargetState::new(Vec2::new(t.x_m, t.y_m), Vec2::new(t.vx_mps, t.vy_mps), t.rcs_m2)
            .map_err(|e| anyhow!("{}: {e}", at("target", tgt.span())))?;

        let roi_s = raw.roi.ok_or_else(|| missing("roi"))?;
        let r = roi_s.get_ref();
        let pixel_stretch = scale.sqrt();
        let roi = RoiGrid::new(
            r.x_min_m,
            r.x_max_m,
            r.y_min_m,
            r.y_max_m,
            r.dx_m / pixel_stretch,
            r.dy_m / pixel_stretch,
        )
            .map_err(|e| anyhow!("{}: {e}", at("roi", roi_s.span())))?;

        let coarse_s = raw.coarse.ok_or_else(|| missing("coarse"))?;
        let c = coarse_s.get_ref();
        let f_d_range = match (c.f_d_min_hz, c.f_d_max_hz) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => bail!(
                "{}: f_d_min_hz and f_d_max_hz must be given together",
                at("coarse", coarse_s.span())
            ),
        };
        let coarse = CoarseSettings {
            c_fd: c.c_fdopp,
            c_tau: c.c_tau,
            c_phi: c.c_phi,
            beamwidth: c.beamwidth_rad.unwrap_or_else(|| params.rx_beamwidth()),
            f_d_range,
        };
        coarse
            .validate()
            .map_err(|e| anyhow!("{}: {e}", at("coarse", coarse_s.span())))?;

        let mc_s = raw.mc.ok_or_else(|| missing("mc"))?;
        let mc = mc_s.get_ref();
        let subsets = mc
            .bs_subsets
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&k| {
                        if k == 0 || k > sites.len() {
                            Err(anyhow!(
                                "{}: BS number {k} in bs_subsets is outside 1..={}",
                                at("mc", mc_s.span()),
                                sites.len()
                            ))
                        } else {
                            Ok(k - 1)
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let file = Self {
            scenario: Scenario {
                params,
                sites,
                beamformer,
                target,
                roi,
                coarse,
            },
            n_trials: scaled_count(mc.n_trials, scale),
            seed: overrides.seed.unwrap_or(mc.seed),
            waypoints: mc.waypoints_m.iter().map(|w| Vec2::new(w[0], w[1])).collect(),
            subsets,
        };
        file.plan(true)
            .validate()
            .map_err(|e| anyhow!("{}: {e}", at("mc", mc_s.span())))?;
        Ok(file)
    }

    pub fn plan(&self, add_noise: bool) -> ExperimentPlan {
        ExperimentPlan {
            scenario: self.scenario.clone(),
            waypoints: self.waypoints.clone(),
            n_trials: self.n_trials,
            subsets: self.subsets.clone(),
            seed: self.seed,
            add_noise,
        }
    }

    /// All stations, in file order.
    pub fn all_stations(&self) -> Vec<usize> {
        (0..self.scenario.sites.len()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenario_is_valid() {
        let f = ScenarioFile::load(BUNDLED_NAME, Overrides::default()).unwrap();
        assert_eq!((f.scenario.params.m, f.scenario.params.n), (96, 50));
        assert_eq!(f.scenario.roi.nx, 201);
        assert_eq!(f.subsets, vec![vec![0], vec![0, 1], vec![0, 1, 2]]);
        assert!((f.scenario.params.p_t - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scale_shrinks_counts_and_pixels() {
        let f = ScenarioFile::load(
            BUNDLED_NAME,
            Overrides {
                seed: Some(9),
                scale: Some(0.25),
            },
        )
        .unwrap();
        assert_eq!((f.scenario.params.m, f.scenario.params.n, f.n_trials, f.seed), (24, 13, 125, 9));
        assert_eq!(f.scenario.roi.nx, 101);
    }

    #[test]
    fn line_numbers_count_from_one() {
        assert_eq!(line_of("a\nb\nc", 4..5), 3);
    }
}

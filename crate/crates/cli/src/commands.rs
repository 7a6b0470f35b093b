use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use isac_coop::crlb::{peb_map, BoundSetup};
use isac_coop::estimator::{two_stage_estimate, Correlator};
use isac_coop::harness::{bs_seed, run_experiment, symbol_source};
use isac_coop::otfs::{BackendOptions, BackendRegistry, ChannelEngine, ChannelOperator, DelayDopplerFrame, DEFAULT_BACKEND};
use isac_coop::rng::derive_seed;
use isac_coop::scene::{integrated_snr, radial_params, synthesize_rx, to_local, to_polar, LinkBudget, Vec2};
use isac_coop::{Complex64, SPEED_OF_LIGHT};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, Common, EstimateArgs, THREADS_ENV};
use crate::output::{self, num, subset_label, subset_tag, write_file, TABLE_COLUMNS};
use crate::scenario::{Overrides, ScenarioFile};

/// Trial key of the single scene written by `simulate` and read by `estimate`.
pub const SCENE_KEY: [u64; 1] = [0x5CE4E];
const ESTIMATE_BOUND_TAG: u64 = 0xE57;
const PEB_MAP_TAG: u64 = 0x3A9;

pub const MANIFEST: &str = "manifest.json";

pub fn rx_file(bs: usize) -> String {
    format!("rx_bs{}.bin", bs + 1)
}

pub fn frame_file(bs: usize) -> String {
    format!("frame_bs{}.bin", bs + 1)
}

pub fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Validate(c) | Command::Simulate(c) | Command::Crlb(c) | Command::Rmse(c) => c,
        Command::Estimate(e) => &e.common,
    };
    let threads = thread_count(common.threads)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .context("building the worker pool")?;
    pool.install(|| match &cli.command {
        Command::Validate(c) => validate(c),
        Command::Simulate(c) => simulate(c),
        Command::Estimate(e) => estimate(e),
        Command::Crlb(c) => crlb(c),
        Command::Rmse(c) => rmse(c),
    })
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| anyhow!("{THREADS_ENV}={v:?} is not a thread count"))?,
            ),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        bail!("thread count must be >= 1");
    }
    Ok(n)
}

fn load(c: &Common) -> Result<ScenarioFile> {
    ScenarioFile::load(
        &c.scenario,
        Overrides {
            seed: c.seed,
            scale: c.scale,
        },
    )
}

/// `--backend` wins; `--support-halfwidth` alone selects `truncated`.
pub fn backend_name(c: &Common) -> &str {
    match (&c.backend, c.support_halfwidth) {
        (Some(b), _) => b,
        (None, Some(_)) => "truncated",
        (None, None) => DEFAULT_BACKEND,
    }
}

fn engine(c: &Common, sf: &ScenarioFile) -> Result<ChannelEngine> {
    let mut opts = BackendOptions::default();
    if let Some(k) = c.support_halfwidth {
        opts.support_halfwidth = k;
    }
    let registry = BackendRegistry::default();
    ChannelEngine::from_registry(&registry, backend_name(c), &sf.scenario.params, &opts).map_err(|e| {
        anyhow!(
            "{e} (available: {})",
            registry.names().collect::<Vec<_>>().join(", ")
        )
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Closed-form per-sample SNR `|h|^2 / sigma^2` of the echo at BS `bs`.
pub fn link_snr(sf: &ScenarioFile, bs: usize, p: Vec2) -> Result<f64> {
    let sc = &sf.scenario;
    let target = sc.target_at(p)?;
    let radial = radial_params(&target, &sc.sites[bs], &sc.params)?;
    let link = LinkBudget::new(&sc.params, &radial, target.rcs, &sc.beamformer, 0.0);
    Ok(link.h.norm_sqr() / sc.params.noise_var())
}

fn validate(c: &Common) -> Result<()> {
    let sf = load(c)?;
    let engine = engine(c, &sf)?;
    let p = &sf.scenario.params;
    println!("scenario {} is valid", c.scenario);
    println!("  M x N = {} x {}, N_T = {}, N_R = {}", p.m, p.n, p.n_tx, p.n_rx);
    println!("  backend: {}", engine.backend().name());
    println!("  Doppler resolution: {:.6e} Hz", p.doppler_resolution());
    println!(
        "  delay resolution: {:.6e} s ({:.4} m range)",
        p.delay_resolution(),
        p.delay_resolution() * SPEED_OF_LIGHT / 2.0
    );
    println!("  noise variance: {:.6e} W", p.noise_var());
    println!("  P_avg: {:.6e} W", p.p_avg());
    let bf = &sf.scenario.beamformer;
    println!(
        "  transmit sector: mean gain {:.3} dB, ripple {:.3} dB",
        bf.mean_gain_db, bf.ripple_db
    );
    let r = &sf.scenario.roi;
    println!("  RoI: {} x {} pixels of {} m x {} m", r.nx, r.ny, r.dx, r.dy);
    println!(
        "  Monte Carlo: {} trials, seed {}, subsets [{}]",
        sf.n_trials,
        sf.seed,
        sf.subsets.iter().map(|s| subset_label(s)).collect::<Vec<_>>().join("; ")
    );
    println!("  link SNR per BS [dB]:");
    for w in &sf.waypoints {
        let cells: Vec<String> = (0..sf.scenario.sites.len())
            .map(|i| match link_snr(&sf, i, *w) {
                Ok(s) => format!("BS{} {:7.2}", i + 1, db(s)),
                Err(_) => format!("BS{} not visible", i + 1),
            })
            .collect();
        println!("    ({:6.2}, {:6.2})  {}", w.x, w.y, cells.join("  "));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestStation {
    pub bs: usize,
    pub seed: u64,
    pub x_m: f64,
    pub y_m: f64,
    pub rotation_rad: f64,
    pub f_d_hz: f64,
    pub tau_s: f64,
    pub phi_rad: f64,
    pub range_m: f64,
    pub radial_velocity_mps: f64,
    pub alpha_phase_rad: f64,
    pub h_re: f64,
    pub h_im: f64,
    /// Closed form `|h|^2 / sigma^2`.
    pub link_snr_db: f64,
    /// Integrated `||h G x||^2 / (M N N_R sigma^2)` of the dumped frame.
    pub snr_db: f64,
    pub rx_file: String,
    pub frame_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub noiseless: bool,
    pub backend: String,
    pub m: usize,
    pub n: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    pub delta_f_hz: f64,
    pub t_s: f64,
    pub f_c_hz: f64,
    pub p_t_w: f64,
    pub n0_w_per_hz: f64,
    pub doppler_resolution_hz: f64,
    pub delay_resolution_s: f64,
    pub noise_var_w: f64,
    pub p_avg_w: f64,
    pub target_x_m: f64,
    pub target_y_m: f64,
    pub target_vx_mps: f64,
    pub target_vy_mps: f64,
    pub rcs_m2: f64,
    pub stations: Vec<ManifestStation>,
}

struct Scene {
    rx: Vec<Vec<Complex64>>,
    frames: Vec<DelayDopplerFrame>,
}

fn synthesize_scene(engine: &ChannelEngine, sf: &ScenarioFile, noiseless: bool) -> Result<(Scene, Manifest)> {
    let sc = &sf.scenario;
    let p = &sc.params;
    let mut scene = Scene {
        rx: Vec::new(),
        frames: Vec::new(),
    };
    let mut stations = Vec::new();
    for (i, site) in sc.sites.iter().enumerate() {
        let seed = bs_seed(sf.seed, &SCENE_KEY, i);
        let frame = symbol_source(seed, p.m, p.n);
        let rx = synthesize_rx(engine, site, &sc.target, &sc.beamformer, &frame, seed, !noiseless)
            .with_context(|| format!("synthesising BS {}", i + 1))?;
        let op = ChannelOperator::new(p, rx.radial.f_d, rx.radial.tau, rx.radial.phi)?;
        let snr = integrated_snr(engine, &op, rx.link.h, &frame)?;
        stations.push(ManifestStation {
            bs: i + 1,
            seed,
            x_m: site.origin.x,
            y_m: site.origin.y,
            rotation_rad: site.rotation(),
            f_d_hz: rx.radial.f_d,
            tau_s: rx.radial.tau,
            phi_rad: rx.radial.phi,
            range_m: rx.radial.range,
            radial_velocity_mps: rx.radial.radial_velocity,
            alpha_phase_rad: rx.link.alpha_phase,
            h_re: rx.link.h.re,
            h_im: rx.link.h.im,
            link_snr_db: db(rx.link.h.norm_sqr() / p.noise_var()),
            snr_db: db(snr),
            rx_file: rx_file(i),
            frame_file: frame_file(i),
        });
        scene.rx.push(rx.y);
        scene.frames.push(frame);
    }
    let t = &sc.target;
    let manifest = Manifest {
        seed: sf.seed,
        noiseless,
        backend: engine.backend().name().to_string(),
        m: p.m,
        n: p.n,
        n_tx: p.n_tx,
        n_rx: p.n_rx,
        delta_f_hz: p.delta_f,
        t_s: p.t_slot,
        f_c_hz: p.f_c,
        p_t_w: p.p_t,
        n0_w_per_hz: p.n0,
        doppler_resolution_hz: p.doppler_resolution(),
        delay_resolution_s: p.delay_resolution(),
        noise_var_w: p.noise_var(),
        p_avg_w: p.p_avg(),
        target_x_m: t.position.x,
        target_y_m: t.position.y,
        target_vx_mps: t.velocity.x,
        target_vy_mps: t.velocity.y,
        rcs_m2: t.rcs,
        stations,
    };
    Ok((scene, manifest))
}

fn simulate(c: &Common) -> Result<()> {
    let sf = load(c)?;
    let engine = engine(c, &sf)?;
    let (scene, manifest) = synthesize_scene(&engine, &sf, c.noiseless)?;
    prepare_out(&c.out)?;
    for (i, (y, x)) in scene.rx.iter().zip(&scene.frames).enumerate() {
        write_file(&c.out.join(rx_file(i)), &output::encode_samples(y))?;
        write_file(&c.out.join(frame_file(i)), &output::encode_samples(x.as_slice()))?;
    }
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_file(&c.out.join(MANIFEST), json.as_bytes())?;
    for s in &manifest.stations {
        println!(
            "BS{}: f_D {:.3} Hz, tau {:.4e} s, phi {:.5} rad, SNR {:.2} dB",
            s.bs, s.f_d_hz, s.tau_s, s.phi_rad, s.snr_db
        );
    }
    println!("wrote {} receptions to {}", manifest.stations.len(), c.out.display());
    Ok(())
}

fn read_scene(dir: &Path, sf: &ScenarioFile) -> Result<Scene> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let p = &sf.scenario.params;
    if (manifest.m, manifest.n, manifest.n_rx) != (p.m, p.n, p.n_rx) {
        bail!(
            "{} was written for M={}, N={}, N_R={} but the scenario has M={}, N={}, N_R={}",
            path.display(),
            manifest.m,
            manifest.n,
            manifest.n_rx,
            p.m,
            p.n,
            p.n_rx
        );
    }
    if manifest.stations.len() != sf.scenario.sites.len() {
        bail!(
            "{} holds {} stations, the scenario defines {}",
            path.display(),
            manifest.stations.len(),
            sf.scenario.sites.len()
        );
    }
    let mut scene = Scene {
        rx: Vec::new(),
        frames: Vec::new(),
    };
    for s in &manifest.stations {
        let read = |name: &str| -> Result<Vec<Complex64>> {
            let f = dir.join(name);
            output::decode_samples(&fs::read(&f).with_context(|| format!("reading {}", f.display()))?)
                .with_context(|| format!("decoding {}", f.display()))
        };
        let y = read(&s.rx_file)?;
        if y.len() != p.frame_len() * p.n_rx {
            bail!("{} holds {} samples, expected {}", s.rx_file, y.len(), p.frame_len() * p.n_rx);
        }
        let frame = DelayDopplerFrame::from_vec(p.m, p.n, read(&s.frame_file)?)
            .with_context(|| format!("frame in {}", s.frame_file))?;
        scene.rx.push(y);
        scene.frames.push(frame);
    }
    Ok(scene)
}

fn estimate(a: &EstimateArgs) -> Result<()> {
    let c = &a.common;
    let sf = load(c)?;
    let engine = engine(c, &sf)?;
    let sc = &sf.scenario;
    let scene = match &a.input {
        Some(dir) => read_scene(dir, &sf)?,
        None => synthesize_scene(&engine, &sf, c.noiseless)?.0,
    };
    let correlators = scene
        .rx
        .iter()
        .zip(&scene.frames)
        .map(|(y, x)| Correlator::new(&engine, y, x))
        .collect::<isac_coop::Result<Vec<_>>>()?;
    let (record, fusion) =
        two_stage_estimate(&engine, &correlators, &sc.sites, &sc.coarse, &sc.roi).context("estimation")?;
    let all = sf.all_stations();
    let truth = sc.target.position;
    let bound = sc
        .bound_at(&engine, &all, truth, derive_seed(sf.seed, &[ESTIMATE_BOUND_TAG]))
        .context("bounds at the target")?;

    let lead = &sc.sites[0];
    let (tau_true, phi_true) = to_polar(to_local(truth, lead))?;
    let local_hat = to_local(fusion.position, lead);
    let range_err = (local_hat.norm() - tau_true * SPEED_OF_LIGHT / 2.0).abs();
    let d = local_hat.y.atan2(local_hat.x) - phi_true;
    let angle_err = ((d + PI).rem_euclid(TAU) - PI).abs();
    let pos_err = (fusion.position - truth).norm();

    prepare_out(&c.out)?;
    let mut maps = Vec::new();
    for (i, m) in fusion.per_bs.iter().enumerate() {
        let name = format!("radar_bs{}.csv", i + 1);
        write_file(&c.out.join(&name), output::format_raster(&m.grid, &m.values).as_bytes())?;
        maps.push((name, format!("radar map, BS {}", i + 1)));
    }
    write_file(
        &c.out.join("radar_fused.csv"),
        output::format_raster(&fusion.fused.grid, &fusion.fused.values).as_bytes(),
    )?;
    maps.push(("radar_fused.csv".into(), "fused radar map".into()));

    let mut table = TABLE_COLUMNS.join(",") + ",subset,x_hat_m,y_hat_m,objective\n";
    let row = [
        num(truth.x),
        num(truth.y),
        all.len().to_string(),
        num(range_err),
        num(bound.per_bs[0].range_efim),
        num(angle_err),
        num(bound.per_bs[0].angle_efim),
        num(pos_err),
        num(bound.peb),
        "1".into(),
        "0".into(),
        subset_label(&all),
        num(fusion.position.x),
        num(fusion.position.y),
        num(record.objective),
    ];
    table += &(row.join(",") + "\n");
    write_file(&c.out.join("estimate.csv"), table.as_bytes())?;

    let mut per_bs = String::from(
        "bs,f_d_hat_hz,tau_hat_s,phi_hat_rad,h_hat_re,h_hat_im,objective,f_d_true_hz,tau_true_s,phi_true_rad\n",
    );
    for (i, e) in record.per_bs.iter().enumerate() {
        let r = radial_params(&sc.target, &sc.sites[i], &sc.params)?;
        let fields = [
            (i + 1).to_string(),
            num(e.f_d),
            num(e.tau),
            num(e.phi),
            num(e.h.re),
            num(e.h.im),
            num(e.objective),
            num(r.f_d),
            num(r.tau),
            num(r.phi),
        ];
        per_bs += &(fields.join(",") + "\n");
    }
    write_file(&c.out.join("estimate_bs.csv"), per_bs.as_bytes())?;
    write_file(
        &c.out.join("plot_estimate.gp"),
        output::raster_script(&maps, &sc.roi).as_bytes(),
    )?;
    println!(
        "estimate ({:.4}, {:.4}) m, truth ({:.4}, {:.4}) m, error {:.4} m, PEB {:.4} m",
        fusion.position.x, fusion.position.y, truth.x, truth.y, pos_err, bound.peb
    );
    Ok(())
}

pub const CRLB_COLUMNS: [&str; 9] = [
    "waypoint_x",
    "waypoint_y",
    "n_bs",
    "subset",
    "crb_range_m",
    "crb_angle_rad",
    "crb_range_full_m",
    "crb_angle_full_rad",
    "peb_m",
];

fn crlb(c: &Common) -> Result<()> {
    let sf = load(c)?;
    let engine = engine(c, &sf)?;
    let sc = &sf.scenario;
    let mut table = CRLB_COLUMNS.join(",") + "\n";
    for (iw, wp) in sf.waypoints.iter().enumerate() {
        for subset in &sf.subsets {
            let b = sc
                .bound_at(&engine, subset, *wp, derive_seed(sf.seed, &[iw as u64]))
                .with_context(|| format!("bounds at ({}, {}) for BSs {}", wp.x, wp.y, subset_label(subset)))?;
            let lead = &b.per_bs[0];
            let fields = [
                num(wp.x),
                num(wp.y),
                subset.len().to_string(),
                subset_label(subset),
                num(lead.range_efim),
                num(lead.angle_efim),
                num(lead.range_full),
                num(lead.angle_full),
                num(b.peb),
            ];
            table += &(fields.join(",") + "\n");
        }
    }
    prepare_out(&c.out)?;
    write_file(&c.out.join("crlb.csv"), table.as_bytes())?;

    let frames = sc.bound_frames(derive_seed(sf.seed, &[PEB_MAP_TAG]));
    let beamformers = vec![sc.beamformer.clone(); sc.sites.len()];
    let setup = BoundSetup {
        engine: &engine,
        sites: &sc.sites,
        beamformers: &beamformers,
        frames: &frames,
        velocity: sc.target.velocity,
        rcs: sc.target.rcs,
    };
    let mut maps = Vec::new();
    for subset in &sf.subsets {
        let map = peb_map(&setup, subset, &sc.roi)
            .with_context(|| format!("PEB map for BSs {}", subset_label(subset)))?;
        let name = format!("peb_{}.csv", subset_tag(subset));
        write_file(&c.out.join(&name), output::format_raster(&map.grid, &map.values).as_bytes())?;
        if map.excluded + map.unobservable > 0 {
            println!(
                "{name}: {} pixels outside coverage, {} unobservable",
                map.excluded, map.unobservable
            );
        }
        maps.push((name, format!("PEB [m], BSs {}", subset_label(subset))));
    }
    let max_bs = sf.subsets.iter().map(Vec::len).max().unwrap_or(1);
    write_file(
        &c.out.join("plot_crlb.gp"),
        output::crlb_script(max_bs, &maps, &sc.roi).as_bytes(),
    )?;
    println!(
        "wrote bounds for {} waypoints x {} subsets to {}",
        sf.waypoints.len(),
        sf.subsets.len(),
        c.out.display()
    );
    Ok(())
}

fn rmse(c: &Common) -> Result<()> {
    let sf = load(c)?;
    let engine = engine(c, &sf)?;
    let result = run_experiment(&engine, &sf.plan(!c.noiseless))?;
    prepare_out(&c.out)?;
    write_file(&c.out.join("rmse.csv"), output::format_rmse_table(&result.rows).as_bytes())?;
    let max_bs = sf.subsets.iter().map(Vec::len).max().unwrap_or(1);
    write_file(&c.out.join("plot_rmse.gp"), output::rmse_script(max_bs).as_bytes())?;
    for r in &result.rows {
        println!(
            "({:6.2}, {:6.2}) BSs {:7}  RMSE {:.4} m  PEB {:.4} m",
            r.waypoint.x,
            r.waypoint.y,
            subset_label(&r.subset),
            r.rmse_pos_m,
            r.peb_m
        );
    }
    eprintln!(
        "{} trials in {:.1} s",
        sf.n_trials * sf.waypoints.len() * sf.subsets.len(),
        result.wall_time.as_secs_f64()
    );
    Ok(())
}

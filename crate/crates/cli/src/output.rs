//! File formats: CSV rasters and tables, binary sample dumps, gnuplot scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use isac_coop::estimator::RoiGrid;
use isac_coop::harness::RmseRow;
use num_complex::Complex64;

pub const RASTER_HEADER: &str = "x_min,y_min,dx,dy,nx,ny";

/// Fixed leading columns of estimate and RMSE tables.
pub const TABLE_COLUMNS: [&str; 11] = [
    "waypoint_x",
    "waypoint_y",
    "n_bs",
    "rmse_range_m",
    "crb_range_m",
    "rmse_angle_rad",
    "crb_angle_rad",
    "rmse_pos_m",
    "peb_m",
    "n_trials",
    "n_failed",
];

/// 17 significant digits, enough to round-trip any f64.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Header line, one line of grid values, then `ny` rows of `nx` values
/// (row `iy` holds `y = y_min + iy dy`).
pub fn format_raster(grid: &RoiGrid, values: &[f64]) -> String {
    assert_eq!(values.len(), grid.len(), "raster size mismatch");
    let mut s = String::with_capacity(values.len() * 24 + 128);
    let _ = writeln!(
        s,
        "{RASTER_HEADER}\n{},{},{},{},{},{}",
        num(grid.x_min),
        num(grid.y_min),
        num(grid.dx),
        num(grid.dy),
        grid.nx,
        grid.ny
    );
    for row in values.chunks(grid.nx) {
        let line: Vec<String> = row.iter().map(|&v| num(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Inverse of [`format_raster`].
pub fn parse_raster(text: &str) -> Result<(RoiGrid, Vec<f64>)> {
    let mut lines = text.lines();
    if lines.next() != Some(RASTER_HEADER) {
        bail!("raster does not start with `{RASTER_HEADER}`");
    }
    let meta: Vec<&str> = lines.next().context("raster has no grid line")?.split(',').collect();
    if meta.len() != 6 {
        bail!("raster grid line has {} fields, expected 6", meta.len());
    }
    let f = |i: usize| meta[i].parse::<f64>().with_context(|| format!("bad grid field `{}`", meta[i]));
    let (nx, ny): (usize, usize) = (meta[4].parse()?, meta[5].parse()?);
    let grid = RoiGrid {
        x_min: f(0)?,
        y_min: f(1)?,
        dx: f(2)?,
        dy: f(3)?,
        nx,
        ny,
    };
    let mut values = Vec::with_capacity(nx * ny);
    for (iy, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("bad value in raster row {iy}"))?;
        if row.len() != nx {
            bail!("raster row {iy} has {} values, expected {nx}", row.len());
        }
        values.extend(row);
    }
    if values.len() != nx * ny {
        bail!("raster has {} rows, expected {ny}", values.len() / nx.max(1));
    }
    Ok((grid, values))
}

/// Interleaved little-endian `f64` pairs `(re, im)`.
pub fn encode_samples(z: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(z.len() * 16);
    for v in z {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(16) {
        bail!("sample dump length {} is not a multiple of 16 bytes", bytes.len());
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect())
}

/// One-based BS numbers joined with spaces, e.g. `1 2 3`.
pub fn subset_label(subset: &[usize]) -> String {
    subset.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ")
}

/// File-name form of a subset, e.g. `1-2-3`.
pub fn subset_tag(subset: &[usize]) -> String {
    subset.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("-")
}

pub const RMSE_EXTRA_COLUMNS: [&str; 4] = ["subset", "rmse_range_coarse_m", "rmse_angle_coarse_rad", "se_pos_m"];

pub fn format_rmse_table(rows: &[RmseRow]) -> String {
    let mut s = TABLE_COLUMNS.join(",");
    s.push(',');
    s.push_str(&RMSE_EXTRA_COLUMNS.join(","));
    s.push('\n');
    for r in rows {
        let fields = [
            num(r.waypoint.x),
            num(r.waypoint.y),
            r.subset.len().to_string(),
            num(r.rmse_range_m),
            num(r.crb_range_m),
            num(r.rmse_angle_rad),
            num(r.crb_angle_rad),
            num(r.rmse_pos_m),
            num(r.peb_m),
            r.n_trials.to_string(),
            r.n_failed.to_string(),
            subset_label(&r.subset),
            num(r.rmse_range_coarse_m),
            num(r.rmse_angle_coarse_rad),
            num(r.se_pos_m),
        ];
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

fn image_plot(file: &str, grid: &RoiGrid, title: &str) -> String {
    format!(
        "set title '{title}'\nplot '{file}' skip 2 matrix using ({x0:e}+$1*{dx:e}):({y0:e}+$2*{dy:e}):3 with image notitle\n",
        x0 = grid.x_min,
        dx = grid.dx,
        y0 = grid.y_min,
        dy = grid.dy,
    )
}

const MAP_AXES: &str = "set size ratio -1\nset xlabel 'x [m]'\nset ylabel 'y [m]'\n";

fn raster_pages(maps: &[(String, String)], grid: &RoiGrid) -> String {
    let mut s = String::from(MAP_AXES);
    for (file, title) in maps {
        s.push_str(&image_plot(file, grid, title));
        s.push_str("pause -1\n");
    }
    s
}

/// Script showing each raster in turn, one page per map.
pub fn raster_script(maps: &[(String, String)], grid: &RoiGrid) -> String {
    format!("set datafile separator ','\n{}", raster_pages(maps, grid))
}

/// RMSE and bound against waypoint x, one curve pair per subset size.
pub fn rmse_script(max_bs: usize) -> String {
    format!(
        "set datafile separator ','\nset key top left\nset logscale y\n\
         set xlabel 'waypoint x [m]'\nset ylabel 'position error [m]'\n\
         plot for [k=1:{max_bs}] 'rmse.csv' skip 1 using 1:(column(3)==k ? column(8) : 1/0) \
         with linespoints title sprintf('RMSE, %d BS', k), \\\n     \
         for [k=1:{max_bs}] 'rmse.csv' skip 1 using 1:(column(3)==k ? column(9) : 1/0) \
         with lines dashtype 2 title sprintf('PEB, %d BS', k)\npause -1\n"
    )
}

/// Bounds against waypoint x from `crlb.csv`.
pub fn crlb_script(max_bs: usize, maps: &[(String, String)], grid: &RoiGrid) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key top left\nset logscale y\n\
         set xlabel 'waypoint x [m]'\nset ylabel 'PEB [m]'\n\
         plot for [k=1:{max_bs}] 'crlb.csv' skip 1 using 1:(column(3)==k ? column(9) : 1/0) \
         with linespoints title sprintf('PEB, %d BS', k)\npause -1\nunset logscale y\n"
    );
    s.push_str(&raster_pages(maps, grid));
    s
}

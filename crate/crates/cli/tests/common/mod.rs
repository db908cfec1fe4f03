#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcadmm::dataio::{
    generate_balance_cliques, generate_moons, save_features_csv, write_pgm, write_ppm, GrayImage, RgbImage,
};
use dcadmm::model::IterationTrace;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn dcadmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcadmm"))
        .args(args)
        .env("DCADMM_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Two small noisy moons with two balance cliques; returns (data, constraints).
pub fn write_moons_fixture(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let d = generate_moons(12, 2, 0.1, seed).unwrap();
    let truth = d.true_labels.clone().unwrap();
    let data = dir.join("moons.csv");
    save_features_csv(&data, &d).unwrap();
    let spec = generate_balance_cliques(&truth, 2, 2, 8, 1, seed).unwrap();
    let constraints = dir.join("moons.toml");
    spec.save(&constraints).unwrap();
    (data, constraints)
}

/// Flags that make the fixture converge quickly.
pub const QUICK: [&str; 6] = [
    "--set",
    "solver.gamma=0.5",
    "--set",
    "solver.rho0=0.05",
    "--set",
    "solver.tau=1.05",
];

pub struct SegmentDemo {
    pub image: PathBuf,
    pub scribbles: PathBuf,
    /// Region map in the scribble convention (label + 1 per pixel).
    pub truth: PathBuf,
    pub width: usize,
    pub height: usize,
    pub regions: Vec<u8>,
}

fn save_demo(
    dir: &Path,
    name: &str,
    w: usize,
    h: usize,
    colors: Vec<[u8; 3]>,
    regions: Vec<u8>,
    scribbles: Vec<u8>,
) -> SegmentDemo {
    let image = dir.join(format!("{name}.ppm"));
    let data = colors.iter().flat_map(|c| c.iter().copied()).collect();
    write_ppm(
        &image,
        &RgbImage {
            width: w,
            height: h,
            data,
        },
    )
    .unwrap();
    let scr = dir.join(format!("{name}-scribbles.pgm"));
    write_pgm(
        &scr,
        &GrayImage {
            width: w,
            height: h,
            data: scribbles,
        },
    )
    .unwrap();
    let truth = dir.join(format!("{name}-truth.pgm"));
    write_pgm(
        &truth,
        &GrayImage {
            width: w,
            height: h,
            data: regions.clone(),
        },
    )
    .unwrap();
    SegmentDemo {
        image,
        scribbles: scr,
        truth,
        width: w,
        height: h,
        regions,
    }
}

/// Two flat halves with one vertical scribble stroke in each.
pub fn write_halves(dir: &Path, w: usize, h: usize) -> SegmentDemo {
    let regions: Vec<u8> = (0..w * h).map(|v| if v % w < w / 2 { 1 } else { 2 }).collect();
    let colors = regions
        .iter()
        .map(|&r| if r == 1 { [180, 40, 40] } else { [60, 120, 220] })
        .collect();
    let mut scr = vec![0u8; w * h];
    let rows = if h > 4 { 1..h - 1 } else { 0..h };
    for y in rows {
        scr[y * w + 1] = 1;
        scr[y * w + w - 2] = 2;
    }
    save_demo(dir, &format!("halves{w}x{h}"), w, h, colors, regions, scr)
}

/// Demo `k` in 0..3: two flat halves, three flat stripes, and two noisy halves.
pub fn write_segment_demo(dir: &Path, k: usize) -> SegmentDemo {
    match k {
        0 => write_halves(dir, 12, 10),
        1 => {
            let (w, h) = (10, 12);
            let regions: Vec<u8> = (0..w * h).map(|v| 1 + ((v / w) / 4) as u8).collect();
            let palette = [[250, 250, 40], [30, 160, 60], [90, 30, 120]];
            let colors = regions.iter().map(|&r| palette[r as usize - 1]).collect();
            let mut scr = vec![0u8; w * h];
            for (row, label) in [(1, 1), (5, 2), (10, 3)] {
                scr[row * w + 4] = label;
                scr[row * w + 5] = label;
            }
            save_demo(dir, "stripes", w, h, colors, regions, scr)
        }
        _ => {
            let (w, h) = (16, 12);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let regions: Vec<u8> = (0..w * h).map(|v| if (v % w) + (v / w) < 13 { 1 } else { 2 }).collect();
            let colors = regions
                .iter()
                .map(|&r| {
                    let base: [i32; 3] = if r == 1 { [200, 170, 60] } else { [40, 60, 90] };
                    base.map(|c| (c + rng.gen_range(-35..=35)).clamp(0, 255) as u8)
                })
                .collect();
            let mut scr = vec![0u8; w * h];
            for v in [w + 1, 2 * w + 2, w + 6] {
                scr[v] = 1;
            }
            for v in [(h - 2) * w + w - 2, (h - 3) * w + w - 4, (h - 5) * w + w - 1] {
                scr[v] = 2;
            }
            save_demo(dir, "noisy", w, h, colors, regions, scr)
        }
    }
}

/// Traces with the wall-time column cleared.
pub fn without_time(traces: &[IterationTrace]) -> Vec<IterationTrace> {
    traces
        .iter()
        .cloned()
        .map(|mut t| {
            t.wall_time_ms = 0.0;
            t
        })
        .collect()
}

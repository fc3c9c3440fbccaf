//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero when any fails.
//!
//! `cargo test -p palmscan --test acceptance -- 2 6` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use palmscan::config::RunConfig;
use palmscan::exec::Exec;
use palmscan::fsutil::sha256_file;
use palmscan::geotiff::{read_band, read_single, write_raster, WriteOptions};
use palmscan::manifest::load_manifest;
use palmscan::pipeline::{self, Layout};
use palmscan::stages::{age, synth};
use palmscan_core::age::{crosscheck_loss, AgeClass, ClosureResult, LossCheck};
use palmscan_core::classify::{fit_kmeans_auto, majority_vote, KMeansParams};
use palmscan_core::composite::trimmed_mean;
use palmscan_core::optical::{rolling_median_dense, MonthGrid, RollingParams};
use palmscan_core::postproc::{enforce_mmu, horn_slope_deg, ndvi_filter, slope_window};
use palmscan_core::raster::NODATA_U16;
use palmscan_core::stats::nearest_rank_percentile;
use palmscan_core::texture::{savg_values, GlcmParams};
use palmscan_core::validate::{adjusted_area_ci, balanced_accuracy_ci, ConfusionMatrix, StratumCounts};
use palmscan_core::{GridGeometry, RasterBand, TileWindow, Unit};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn grid_json(w: usize, h: usize) -> serde_json::Value {
    json!({"epsg": 32648, "origin_x": 512000.0, "origin_y": 307200.0,
           "px_size_x": 30.0, "px_size_y": -30.0, "width": w, "height": h})
}

/// Writes a synthetic scene and returns its run config.
fn make_scene(dir: &Path, spec: serde_json::Value, workers: usize) -> Result<RunConfig> {
    let s: synth::SynthSpec = serde_json::from_value(spec)?;
    synth::run_synth(&s, dir, &Exec::new(workers, 256)?)?;
    RunConfig::load(&dir.join("config.json"))
}

fn stages(cfg: &mut RunConfig, list: &[&str]) {
    cfg.stages = Some(list.iter().map(|s| s.to_string()).collect());
}

fn truth(dir: &Path, band: &str) -> Result<RasterBand> {
    Ok(read_band(&dir.join("truth/truth.tif"), band)?.1)
}

/// Pixel-wise balanced accuracy of a flag map against the truth palm mask.
/// Nodata in the map counts as "not palm".
fn pixel_ba(map: &RasterBand, reference: &RasterBand) -> f64 {
    let mut cm = ConfusionMatrix::default();
    for i in 0..map.len() {
        cm.add(reference.value(i) == Some(1.0), map.value(i).is_some_and(|v| v > 0.0));
    }
    let sens = cm.tp as f64 / (cm.tp + cm.fn_) as f64;
    let spec = cm.tn as f64 / (cm.tn + cm.fp) as f64;
    0.5 * (sens + spec)
}

// 1 ---------------------------------------------------------------------------

fn extent_run(root: &Path, radar_sd: f64) -> Result<(f64, f64, usize)> {
    let dir = root.join(format!("c1_sd{radar_sd}"));
    let spec = json!({
        "grid": grid_json(1024, 1024),
        "seed": 101,
        "noise": {"radar_sd_db": radar_sd, "optical_sd": 0.0, "cloud_rate": 0.3},
        "optical_start_year": 2017,
        "run": {"cell_side": 10240.0, "vote_threshold": 5},
    });
    let mut cfg = make_scene(&dir, spec, 4)?;
    stages(&mut cfg, &["composite", "texture", "indices", "classify", "postproc"]);
    let ex = Exec::new(4, cfg.tile)?;
    let t = Instant::now();
    pipeline::run(&cfg, &ex)?;
    let secs = t.elapsed().as_secs_f64();
    let (_, extent) = read_single(&Layout::new(&cfg).extent(), Some(Unit::Flag))?;
    let ba = pixel_ba(&extent, &truth(&dir, "truth_palm")?);
    let models: serde_json::Value = serde_json::from_str(&fs::read_to_string(Layout::new(&cfg).models())?)?;
    let n_cells = models["models"].as_array().map_or(0, |m| m.len());
    fs::remove_dir_all(&dir)?;
    Ok((ba, secs, n_cells))
}

fn criterion_1(root: &Path) -> Result<Outcome> {
    let (ba, secs, cells) = extent_run(root, 1.5)?;
    let (ba2, secs2, _) = extent_run(root, 3.0)?;
    let pass = ba >= 0.95 && ba2 >= 0.80 && secs < 120.0 && secs2 < 120.0;
    outcome(
        pass,
        format!(
            "1024x1024, {cells} cells: BA {ba:.4} (>= 0.95) in {secs:.1}s; doubled radar noise BA {ba2:.4} (>= 0.80) in {secs2:.1}s; limit 120s on 4 workers"
        ),
    )
}

// 2 and 6 -------------------------------------------------------------------

struct AgeScene {
    dir: PathBuf,
    cfg: RunConfig,
    extent: PathBuf,
}

fn age_scene(root: &Path) -> Result<AgeScene> {
    let dir = root.join("age_scene");
    let spec = json!({
        "grid": grid_json(384, 384),
        "seed": 205,
        "noise": {"radar_sd_db": 1.5, "optical_sd": 0.0, "cloud_rate": 0.3},
        "optical_start_year": 1984,
        "loss_lead_years": 5,

    });
    let cfg = make_scene(&dir, spec, 4)?;
    let ex = Exec::new(4, 64)?;
    let mut c = cfg.clone();
    stages(&mut c, &["indices"]);
    pipeline::run(&c, &ex)?;
    // The age stage runs on the true extent so that only dating is measured.
    let palm = truth(&dir, "truth_palm")?;
    let (grid, _) = read_single(&dir.join("aux/dem.tif"), None)?;
    let extent = dir.join("truth_extent.tif");
    write_raster(&extent, &grid, &[&palm], &WriteOptions::default())?;
    Ok(AgeScene { dir, cfg, extent })
}

fn run_age_into(s: &AgeScene, loss: Option<&str>, out: &Path) -> Result<RasterBand> {
    let manifest = load_manifest(&s.cfg.manifest)?;
    let mut block = s.cfg.age.clone();
    block.loss = loss.map(str::to_string);
    let series = Layout::new(&s.cfg).series();
    let p = age::run_age(&s.extent, &series, &block, Some(&manifest), out, &WriteOptions::default(), &Exec::new(4, 64)?)?;
    Ok(read_single(&p, Some(Unit::Year))?.1)
}

fn criterion_2(s: &AgeScene) -> Result<Outcome> {
    let detected = run_age_into(s, Some("loss_year"), &s.dir.join("age_c2"))?;
    let expected = truth(&s.dir, "truth_closure_year")?;
    let (mut dated, mut within, mut status_mismatch) = (0u64, 0u64, 0u64);
    let (mut palm, mut open_late) = (0u64, 0u64);
    let ref_year = s.cfg.age.params.ref_year;
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for i in 0..expected.len() {
        let Some(t) = expected.value(i).and_then(ClosureResult::decode) else { continue };
        let d = detected.value(i).and_then(ClosureResult::decode);
        *counts.entry(t.status().name()).or_default() += 1;
        palm += 1;
        open_late += match t {
            ClosureResult::OpenCanopy => 1,
            ClosureResult::Dated(y) if y >= ref_year => 1,
            _ => 0,
        };
        match t {
            ClosureResult::Dated(y) => {
                dated += 1;
                if let Some(ClosureResult::Dated(z)) = d {
                    within += ((z - y).abs() <= 1) as u64;
                }
            }
            _ => status_mismatch += (d != Some(t)) as u64,
        }
        // Sentinel statuses must not appear where the truth is dated.
        if matches!(t, ClosureResult::Dated(_))
            && matches!(d, Some(ClosureResult::PreArchive) | Some(ClosureResult::OpenCanopy))
        {
            status_mismatch += 1;
        }
    }
    let frac = within as f64 / dated.max(1) as f64;
    // The 95th-percentile calibration presumes open canopy is a small tail of
    // the reference-year values. Stands closing in the reference year count
    // fully here, which overstates their share.
    let open = open_late as f64 / palm.max(1) as f64;
    outcome(
        frac >= 0.90 && status_mismatch == 0 && dated > 0 && counts.len() == 3 && open < 0.05,
        format!(
            "{dated} dated truth pixels, {:.2}% within +-1 year (>= 90%); PRE_ARCHIVE/OPEN_CANOPY mismatches {status_mismatch}; truth statuses {counts:?}; open in {ref_year} {:.2}% of palm (< 5%)",
            100.0 * frac,
            100.0 * open
        ),
    )
}

fn criterion_6(s: &AgeScene) -> Result<Outcome> {
    let out = s.dir.join("age_c6");
    let closure = run_age_into(s, Some("loss_year"), &out)?;
    let table = fs::read_to_string(out.join("consistency.csv"))?;
    let loss_path = s.dir.join("aux/loss_year.tif");
    let (grid, loss) = read_single(&loss_path, None)?;
    let decode = palmscan_core::age::decode_loss_year;
    let dated: Vec<(usize, i32)> = (0..closure.len())
        .filter_map(|i| match closure.value(i).and_then(ClosureResult::decode) {
            Some(ClosureResult::Dated(y)) => Some((i, y)),
            _ => None,
        })
        .collect();
    let before: Vec<LossCheck> = dated.iter().map(|&(i, y)| crosscheck_loss(y, loss.value(i).and_then(decode))).collect();
    let all_consistent = before.iter().all(|c| *c == LossCheck::Consistent);
    let stage_consistent = table.lines().any(|l| l.starts_with("CONSISTENT,") && l.ends_with(",1.0"));

    // Inject loss after closure on every 7th dated pixel.
    let mut injected = loss.clone();
    let mut flipped = std::collections::BTreeSet::new();
    for (k, &(i, y)) in dated.iter().enumerate() {
        if k % 7 == 0 {
            injected.values_mut()[i] = (y + 1) as f32;
            flipped.insert(i);
        }
    }
    let inj_path = s.dir.join("loss_injected.tif");
    write_raster(&inj_path, &grid, &[&injected.with_name("loss_injected")], &WriteOptions::default())?;
    let out2 = s.dir.join("age_c6_injected");
    let closure2 = run_age_into(s, Some(inj_path.to_str().context("utf-8 path")?), &out2)?;
    ensure!(closure2 == closure, "closure raster changed with the loss layer");
    let (_, inj) = read_single(&inj_path, None)?;
    let mut exact = true;
    for &(i, y) in &dated {
        let c = crosscheck_loss(y, inj.value(i).and_then(decode));
        let want = if flipped.contains(&i) { LossCheck::EarlyClosure } else { LossCheck::Consistent };
        exact &= c == want;
    }
    let table2 = fs::read_to_string(out2.join("consistency.csv"))?;
    let early_row = format!("EARLY_CLOSURE,{},", flipped.len());
    let stage_counts = table2.lines().any(|l| l.starts_with(&early_row));
    outcome(
        all_consistent && stage_consistent && exact && stage_counts,
        format!(
            "{} dated pixels all CONSISTENT: {all_consistent} (stage table: {stage_consistent}); {} injected, exactly those EARLY_CLOSURE: {exact} (stage table: {stage_counts})",
            dated.len(),
            flipped.len()
        ),
    )
}

// 3 ---------------------------------------------------------------------------

fn flags(v: &[f32], w: usize, h: usize) -> RasterBand {
    RasterBand::new("m", Unit::Flag, Some(NODATA_U16), w, h, v.to_vec()).unwrap()
}

fn criterion_3() -> Result<Outcome> {
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };

    let maps = |yes: usize| -> Vec<RasterBand> { (0..12).map(|k| flags(&[(k < yes) as u8 as f32], 1, 1)).collect() };
    let vote = |yes: usize| -> Result<Option<f32>> {
        let m = maps(yes);
        Ok(majority_vote(&m.iter().collect::<Vec<_>>(), 7)?.value(0))
    };
    check("vote 7/12 positive", vote(7)? == Some(1.0));
    check("vote 6/12 negative", vote(6)? == Some(0.0));

    let ndvi = RasterBand::new("n", Unit::Index, Some(-9999.0), 3, 1, vec![0.5, 0.4999, 0.9])?;
    let kept = ndvi_filter(&flags(&[1.0, 1.0, 1.0], 3, 1), &ndvi, 0.5)?;
    check("ndvi floor 0.5", kept.values() == [1.0, 0.0, 1.0]);

    let single = |px: f64| -> Result<f32> {
        let g = GridGeometry::new(32648, (0.0, 0.0), (px, -px), 3, 3)?;
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        Ok(enforce_mmu(&flags(&v, 3, 3), &g, 900.0)?.values()[4])
    };
    check("mmu keeps one 30 m pixel", single(30.0)? == 1.0);
    check("mmu removes one 10 m pixel", single(10.0)? == 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<[f64; 6]> = (0..600).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
    let (model, scores) = fit_kmeans_auto(&pts, &KMeansParams::default(), 9, 0)?;
    let ks: Vec<usize> = scores.iter().map(|s| s.k).collect();
    check("k in [10, 16]", (10..=16).contains(&model.k) && ks == (10..=16).collect::<Vec<_>>());

    let mut trim_ok = true;
    for n in 1..=60usize {
        let v: Vec<f64> = (0..n).map(|i| -20.0 + ((i * 7919) % n) as f64 * 0.1).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        let drop = (n as f64 * 0.2).floor() as usize;
        let want = s[drop..].iter().sum::<f64>() / (n - drop) as f64;
        trim_ok &= trimmed_mean(&v, 0.2).is_some_and(|m| (m - want).abs() < 1e-12);
    }
    check("trim drops floor(0.2 n)", trim_ok);

    let classes_ok = (0..=40).all(|a| {
        let want = if a < 7 {
            AgeClass::Young
        } else if a <= 15 {
            AgeClass::Prime
        } else {
            AgeClass::Old
        };
        AgeClass::of_age(a) == want
    });
    check("age class boundaries 0..=40", classes_ok);

    outcome(fails.is_empty(), if fails.is_empty() { "all fixtures hold".to_string() } else { format!("failed: {fails:?}") })
}

// 4 ---------------------------------------------------------------------------

/// Textbook SAVG: per offset, the pair-sum marginal p_{x+y} of the
/// (symmetric) co-occurrence counts over the clipped window, then
/// sum s * p(s), averaged over offsets with at least one pair.
fn savg_oracle(lv: &[u8], valid: &[bool], w: usize, h: usize, p: &GlcmParams) -> Vec<Option<f64>> {
    let r = p.radius as i64;
    let nsum = 2 * (p.levels as usize - 1) + 1;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if !valid[(y * w as i64 + x) as usize] {
                out.push(None);
                continue;
            }
            let (y0, y1) = ((y - r).max(0), (y + r).min(h as i64 - 1));
            let (x0, x1) = ((x - r).max(0), (x + r).min(w as i64 - 1));
            let mut acc = 0.0;
            let mut used = 0;
            for &(dy, dx) in &p.offsets {
                let mut hist = vec![0u64; nsum];
                for ay in y0..=y1 {
                    for ax in x0..=x1 {
                        let (by, bx) = (ay + dy as i64, ax + dx as i64);
                        if by < y0 || by > y1 || bx < x0 || bx > x1 {
                            continue;
                        }
                        let (i, j) = ((ay * w as i64 + ax) as usize, (by * w as i64 + bx) as usize);
                        if valid[i] && valid[j] {
                            // (a, b) and (b, a) both land on the same sum
                            hist[lv[i] as usize + lv[j] as usize] += if p.symmetric { 2 } else { 1 };
                        }
                    }
                }
                let total: u64 = hist.iter().sum();
                if total > 0 {
                    acc += hist.iter().enumerate().map(|(s, &c)| s as f64 * c as f64 / total as f64).sum::<f64>();
                    used += 1;
                }
            }
            out.push((used > 0).then(|| acc / used as f64));
        }
    }
    out
}

fn median_oracle(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_4() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut notes = Vec::new();

    // SAVG on 1000 images of 33x33.
    let params = GlcmParams::default();
    let mut savg_max = 0.0f64;
    let mut savg_shape_ok = true;
    for _ in 0..1000 {
        let (w, h) = (33, 33);
        let vals: Vec<f32> = (0..w * h).map(|_| rng.random_range(0..=255u32) as f32).collect();
        let valid: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() > 0.05).collect();
        let band = RasterBand::new("b", Unit::Byte, None, w, h, vals.clone())?;
        let got = savg_values(&band, Some(&valid), &params)?;
        let lv: Vec<u8> = vals.iter().map(|&v| ((v as u32 * params.levels as u32) / 256) as u8).collect();
        let want = savg_oracle(&lv, &valid, w, h, &params);
        for (g, o) in got.iter().zip(&want) {
            match (g, o) {
                (Some(a), Some(b)) => savg_max = savg_max.max((a - b).abs()),
                (None, None) => {}
                _ => savg_shape_ok = false,
            }
        }
    }
    let savg_ok = savg_max <= 1e-9 && savg_shape_ok;
    notes.push(format!("savg max |d| {savg_max:.2e}"));

    // Trimmed mean.
    let mut trim_max = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=40);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..0.0)).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        let k = (0.2 * n as f64).floor() as usize;
        let want = s[k..].iter().sum::<f64>() / (n - k) as f64;
        trim_max = trim_max.max((trimmed_mean(&v, 0.2).unwrap_or(f64::NAN) - want).abs());
    }
    let trim_ok = trim_max <= 1e-9;
    notes.push(format!("trim {trim_max:.2e}"));

    // Rolling median: dense kernel against a per-month scan.
    let mut roll_bad = 0u64;
    let rp = RollingParams::default();
    for _ in 0..10_000 {
        let start = NaiveDate::from_ymd_opt(rng.random_range(1990..2015), rng.random_range(1..=12), 1).unwrap();
        let n = rng.random_range(1..60);
        let mut dates: Vec<NaiveDate> =
            (0..n).map(|_| start + chrono::Days::new(rng.random_range(0..1500))).collect();
        dates.sort();
        let vals: Vec<Option<f64>> =
            (0..n).map(|_| (rng.random::<f64>() > 0.3).then(|| rng.random_range(-1.0..1.0))).collect();
        let days: Vec<i32> = dates.iter().map(|d| d.num_days_from_ce()).collect();
        let grid = MonthGrid::spanning(dates[0], dates[n - 1]);
        let mut out = vec![0.0f32; grid.n_months];
        rolling_median_dense(&days, &vals, &grid, &rp, &mut Vec::new(), &mut out);
        let (mut y, mut m) = (dates[0].year(), dates[0].month());
        for got in &out {
            let mid = NaiveDate::from_ymd_opt(y, m, 15).unwrap().num_days_from_ce();
            let inside: Vec<f64> = days
                .iter()
                .zip(&vals)
                .filter(|(d, _)| (**d - mid).abs() <= 183)
                .filter_map(|(_, v)| *v)
                .collect();
            let want = (inside.len() >= 3).then(|| median_oracle(inside) as f32);
            let same = match want {
                Some(w) => (*got - w).abs() <= 1e-6,
                None => got.is_nan(),
            };
            roll_bad += !same as u64;
            (y, m) = if m == 12 { (y + 1, 1) } else { (y, m + 1) };
        }
    }
    let roll_ok = roll_bad == 0;
    notes.push(format!("rolling mismatches {roll_bad}"));

    // Nearest-rank percentile with p on a 0.1 grid, rank in integers.
    let mut pct_bad = 0u64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..300usize);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tenths = rng.random_range(1..=1000usize);
        let rank = (tenths * n).div_ceil(1000).max(1);
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        pct_bad += (nearest_rank_percentile(&v, tenths as f64 / 10.0)? != s[rank - 1]) as u64;
    }
    let pct_ok = pct_bad == 0;
    notes.push(format!("percentile mismatches {pct_bad}"));

    // Horn slope: explicit kernels, plus the windowed version on interiors.
    let mut horn_max = 0.0f64;
    for _ in 0..10_000 {
        let z: [f64; 9] = std::array::from_fn(|_| rng.random_range(0.0..500.0));
        let (dx, dy) = (rng.random_range(5.0..100.0), rng.random_range(5.0..100.0));
        let kx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
        let ky = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
        let gx: f64 = z.iter().zip(kx).map(|(a, k)| a * k).sum::<f64>() / (8.0 * dx);
        let gy: f64 = z.iter().zip(ky).map(|(a, k)| a * k).sum::<f64>() / (8.0 * dy);
        let want = gx.hypot(gy).atan() * 180.0 / std::f64::consts::PI;
        horn_max = horn_max.max((horn_slope_deg(z, dx, dy) - want).abs());
        let dem = RasterBand::new("dem", Unit::Meters, Some(-9999.0), 3, 3, z.map(|v| v as f32).to_vec())?;
        let win = TileWindow::new(1, 1, 1, 1, 1, 3, 3);
        let zf: [f64; 9] = std::array::from_fn(|k| z[k] as f32 as f64);
        let w2 = horn_slope_deg(zf, dx, dy) as f32;
        horn_max = horn_max.max((slope_window(&dem, dx, dy, &win)[0] - w2).abs() as f64);
    }
    let horn_ok = horn_max <= 1e-9;
    notes.push(format!("horn {horn_max:.2e}"));

    outcome(savg_ok && trim_ok && roll_ok && pct_ok && horn_ok, notes.join("; "))
}

// 5 ---------------------------------------------------------------------------

fn criterion_5() -> Result<Outcome> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6;
    let cm = |tp, fn_, tn, fp| ConfusionMatrix { tp, fp, fn_, tn };
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    let perfect = balanced_accuracy_ci(&cm(50, 0, 50, 0), 0.95)?;
    check("perfect BA", close(perfect.estimate, 1.0) && close(perfect.hi, 1.0));
    check("BA 0.70", close(balanced_accuracy_ci(&cm(40, 10, 30, 20), 0.95)?.estimate, 0.70));
    let half = balanced_accuracy_ci(&cm(50, 50, 50, 50), 0.95)?;
    check("BA half-width", close(half.estimate, 0.5) && close(half.half_width(), 1.959964 * 0.00125f64.sqrt()));

    let sc = |weight, n, palm| StratumCounts { weight, n, palm };
    let a = adjusted_area_ci(&[sc(0.4, 50, 40), sc(0.6, 50, 5)], 1000.0, 0.95)?;
    check("area 0.38", close(a.proportion, 0.38) && close(a.area.estimate, 380.0));
    let p = adjusted_area_ci(&[sc(0.4, 50, 50), sc(0.6, 50, 0)], 1000.0, 0.95)?;
    check("perfect area", close(p.area.estimate, 400.0) && close(p.se, 0.0));
    let one = adjusted_area_ci(&[sc(1.0, 100, 50)], 1000.0, 0.95)?;
    check("single stratum SE", close(one.se, (0.25f64 / 99.0).sqrt()));

    // Proportional growth n, 4n, 16n: half-widths halve each step.
    let ba_hw: Vec<f64> = [1u64, 4, 16]
        .iter()
        .map(|&f| balanced_accuracy_ci(&cm(40 * f, 10 * f, 30 * f, 20 * f), 0.95).map(|i| i.half_width()))
        .collect::<palmscan_core::Result<_>>()?;
    let area_hw: Vec<f64> = [1u64, 4, 16]
        .iter()
        .map(|&f| adjusted_area_ci(&[sc(0.3, 100 * f, 80 * f), sc(0.7, 100 * f, 10 * f)], 1000.0, 0.95).map(|a| a.area.hi - a.area.estimate))
        .collect::<palmscan_core::Result<_>>()?;
    let ba_ratio = [ba_hw[0] / ba_hw[1], ba_hw[1] / ba_hw[2]];
    let area_ratio = [area_hw[0] / area_hw[1], area_hw[1] / area_hw[2]];
    check("BA 1/sqrt(n)", ba_ratio.iter().all(|r| (r - 2.0).abs() <= 1e-6));
    // The n_h - 1 denominator makes the area ratio approach 2 from above.
    check("area 1/sqrt(n)", area_ratio.iter().all(|r| (r - 2.0).abs() <= 0.01));
    let detail = format!(
        "BA half-width ratios {:.6}/{:.6}, area {:.4}/{:.4}{}",
        ba_ratio[0],
        ba_ratio[1],
        area_ratio[0],
        area_ratio[1],
        if fails.is_empty() { String::new() } else { format!("; failed: {fails:?}") }
    );
    outcome(fails.is_empty(), detail)
}

// 7 ---------------------------------------------------------------------------

fn snapshot(dir: &Path) -> Result<BTreeMap<PathBuf, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), sha256_file(&p)?);
            }
        }
    }
    Ok(out)
}

fn criterion_7(root: &Path) -> Result<Outcome> {
    let dir = root.join("determinism");
    let spec = json!({
        "grid": grid_json(200, 176),
        "seed": 707,
        "optical_start_year": 2012,
        "run": {"cell_side": 2000.0, "vote_threshold": 5, "samples_per_cell": 2000, "validate_n_total": 200},
    });
    let mut snaps = Vec::new();
    for workers in [1usize, 4, 16] {
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        let mut cfg = make_scene(&dir, spec.clone(), workers)?;
        cfg.tile = 64;
        cfg.indices.series_tile = 48;
        pipeline::run(&cfg, &Exec::new(workers, cfg.tile)?)?;
        snaps.push(snapshot(&dir)?);
    }
    let n = snaps[0].len();
    let rasters = snaps[0].keys().filter(|p| p.extension().is_some_and(|e| e == "tif")).count();
    let differing: Vec<String> = snaps[0]
        .iter()
        .filter(|(p, h)| snaps[1].get(*p) != Some(h) || snaps[2].get(*p) != Some(h))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let same_sets = snaps[1].len() == n && snaps[2].len() == n;
    fs::remove_dir_all(&dir)?;
    outcome(
        differing.is_empty() && same_sets,
        format!("{n} files ({rasters} rasters) compared across workers 1/4/16; differing: {differing:?}"),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |k: u32| wanted.is_empty() || wanted.contains(&k);
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let mut results: Vec<(u32, &str, Result<Outcome>)> = Vec::new();
    let guarded = |f: &dyn Fn() -> Result<Outcome>| -> Result<Outcome> {
        match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(_) => Err(anyhow::anyhow!("panicked")),
        }
    };
    if on(1) {
        results.push((1, "end-to-end synthetic extent recovery", guarded(&|| criterion_1(root))));
    }
    if on(2) || on(6) {
        match guarded(&|| age_scene(root).map(|s| Outcome { pass: true, detail: s.dir.display().to_string() })) {
            Ok(_) => {
                let s = AgeScene {
                    dir: root.join("age_scene"),
                    cfg: RunConfig::load(&root.join("age_scene/config.json")).expect("config"),
                    extent: root.join("age_scene/truth_extent.tif"),
                };
                if on(2) {
                    results.push((2, "age recovery", guarded(&|| criterion_2(&s))));
                }
                if on(6) {
                    results.push((6, "forest-loss consistency", guarded(&|| criterion_6(&s))));
                }
            }
            Err(e) => {
                let msg = format!("{e:#}");
                if on(2) {
                    results.push((2, "age recovery", Err(anyhow::anyhow!("scene setup failed: {msg}"))));
                }
                if on(6) {
                    results.push((6, "forest-loss consistency", Err(anyhow::anyhow!("scene setup failed: {msg}"))));
                }
            }
        }
    }
    if on(3) {
        results.push((3, "parameter fixtures", guarded(&criterion_3)));
    }
    if on(4) {
        results.push((4, "kernel-vs-oracle equivalence", guarded(&criterion_4)));
    }
    if on(5) {
        results.push((5, "statistical formulas", guarded(&criterion_5)));
    }
    if on(7) {
        results.push((7, "determinism across worker counts", guarded(&|| criterion_7(root))));
    }
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    println!();
    for (k, name, r) in &results {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail.clone()),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failed += !pass as u32;
        println!("criterion {k} {}: {name} -- {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("\nacceptance: {} passed, {failed} failed", results.len() as u32 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

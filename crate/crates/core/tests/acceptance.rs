//! Acceptance run: one PASS/FAIL/SKIP line per criterion. Exits non-zero if
//! any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use bpcorr::config::{PipelineConfig, Protocol};
use bpcorr::estimation::{ls_estimate, ml_estimate, MeasurementSet, NoiseModel};
use bpcorr::evaluation::Method;
use bpcorr::oscillometry::{simulate_cuff_reading, sweep_deflation_rates, CuffProfile};
use bpcorr::pipeline;
use bpcorr::quality_control::{
    qc_filter, qc_filter_with, segment_record, BpReading, QcThresholds, Segment, SegmentStatus,
};
use bpcorr::respiration::RESPIRATORY_BAND_HZ;
use bpcorr::synthetic::{synthesize, SubjectParams};
use bpcorr::waveform_io::{decode_format16, decode_format212, encode_format212, WaveformRecord};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn randn(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_reading(rng: &mut impl Rng) -> BpReading {
    BpReading::new(rng.random_range(80.0..200.0), rng.random_range(40.0..120.0))
}

fn c1_estimator_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_ml: f64 = 0.0;
    let mut worst_ls: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=20);
        let readings: Vec<BpReading> = (0..n).map(|_| random_reading(&mut rng)).collect();
        let mu = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
        let noise = NoiseModel::from_moments(
            mu,
            [rng.random_range(0.5..10.0), rng.random_range(0.5..10.0)],
            rng.random_range(-0.9..0.9),
        )
        .unwrap();
        let set = MeasurementSet::new("s", readings.clone()).unwrap();
        let ls = ls_estimate(&set).unwrap();
        let ml = ml_estimate(&set, &noise).unwrap();
        worst_ml = worst_ml
            .max((ml.sbp - (ls.sbp - mu[0])).abs())
            .max((ml.dbp - (ls.dbp - mu[1])).abs());
        let mut oracle = [0.0f64; 2];
        for r in readings.iter().rev() {
            oracle[0] += r.sbp;
            oracle[1] += r.dbp;
        }
        worst_ls = worst_ls
            .max((ls.sbp - oracle[0] / n as f64).abs())
            .max((ls.dbp - oracle[1] / n as f64).abs());
    }
    check(
        worst_ml <= 1e-12 && worst_ls <= 1e-12,
        format!("max |ML-(LS-mu)| = {worst_ml:.2e}, max |LS-oracle| = {worst_ls:.2e} (tol 1e-12)"),
    )
}

fn c2_monte_carlo() -> Outcome {
    let theta = [120.0, 80.0];
    let noise = NoiseModel::from_moments([-9.29, 6.29], [7.39, 4.70], 0.5).unwrap();
    let c = noise.cov;
    let l11 = c[0][0].sqrt();
    let l21 = c[1][0] / l11;
    let l22 = (c[1][1] - l21 * l21).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = |k: usize| -> Vec<BpReading> {
        (0..k)
            .map(|_| {
                let (z1, z2) = (randn(&mut rng), randn(&mut rng));
                BpReading::new(
                    theta[0] + noise.mu[0] + l11 * z1,
                    theta[1] + noise.mu[1] + l21 * z1 + l22 * z2,
                )
            })
            .collect()
    };
    let trials = 10_000;
    let mut report = Vec::new();
    let mut ok = true;
    for n in [1usize, 5] {
        let errs: Vec<[f64; 2]> = (0..trials)
            .map(|_| {
                let set = MeasurementSet::new("mc", draw(n)).unwrap();
                let e = ml_estimate(&set, &noise).unwrap();
                [e.sbp - theta[0], e.dbp - theta[1]]
            })
            .collect();
        let m = [0, 1].map(|j| errs.iter().map(|e| e[j]).sum::<f64>() / trials as f64);
        ok &= m.iter().all(|v| v.abs() <= 0.3);
        report.push(format!("N={n} mean err ({:.3}, {:.3})", m[0], m[1]));
        if n == 5 {
            let mut cov = [[0.0; 2]; 2];
            for e in &errs {
                for a in 0..2 {
                    for b in 0..2 {
                        cov[a][b] += (e[a] - m[a]) * (e[b] - m[b]);
                    }
                }
            }
            let mut worst: f64 = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] /= (trials - 1) as f64;
                    let target = c[a][b] / 5.0;
                    worst = worst.max(((cov[a][b] - target) / target).abs());
                }
            }
            ok &= worst <= 0.10;
            report.push(format!("N=5 cov max rel dev from C/5 = {:.1}%", worst * 100.0));
        }
    }
    check(ok, report.join("; "))
}

/// Interpolated waveform minus ramp at oversampled index `k`.
fn dense_value(x: &[f64], factor: usize, p: &CuffProfile, step: f64, k: usize) -> f64 {
    let i = (k / factor).min(x.len() - 2);
    let frac = (k - i * factor) as f64 / factor as f64;
    x[i] + (x[i + 1] - x[i]) * frac - p.pressure_at(k as f64 * step)
}

/// First and last sign change of the oversampled difference, each as the
/// bracketing grid interval `[lo, hi]` in seconds.
fn dense_first_last(x: &[f64], fs: f64, p: &CuffProfile, factor: usize) -> Option<([f64; 2], [f64; 2])> {
    let step = 1.0 / (fs * factor as f64);
    let last = (x.len() - 1) * factor;
    let above = |k: usize| dense_value(x, factor, p, step, k) > 0.0;
    let start = above(0);
    let k1 = (1..=last).find(|&k| above(k) != start)?;
    let end = above(last);
    let k2 = (0..last).rev().find(|&k| above(k) != end)?;
    Some((
        [(k1 - 1) as f64 * step, k1 as f64 * step],
        [k2 as f64 * step, (k2 + 1) as f64 * step],
    ))
}

fn random_accepted_segment(rng: &mut ChaCha8Rng, k: usize) -> Option<Segment> {
    let mut p = SubjectParams::random(format!("r{k}"), rng);
    p.duration_s = 60.0;
    p.noise_sd = rng.random_range(0.0..1.0);
    let rec = synthesize(&p, &[], rng).ok()?;
    let seg = segment_record(&rec).into_iter().next()?;
    let seg = qc_filter(seg, false);
    seg.is_accepted().then_some(seg)
}

fn c3_oscillometry_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let factor = 1000;
    let tol_t = 1e-9;
    let (mut n_seg, mut n_read, mut bound_viol, mut time_viol, mut k) = (0, 0, 0, 0, 0);
    while n_seg < 1000 {
        k += 1;
        let Some(seg) = random_accepted_segment(&mut rng, k) else {
            continue;
        };
        n_seg += 1;
        let profile = CuffProfile::new(180.0, rng.random_range(2.0..4.0)).unwrap();
        let Ok(sim) = simulate_cuff_reading(&seg, &profile) else {
            continue;
        };
        n_read += 1;
        let truth = seg.truth.unwrap();
        if sim.reading.sbp > truth.sbp + 1e-9 || sim.reading.dbp < truth.dbp - 1e-9 {
            bound_viol += 1;
        }
        match dense_first_last(&seg.samples, seg.sampling_rate_hz, &profile, factor) {
            Some((a, b)) => {
                let inside = |t: f64, r: [f64; 2]| t >= r[0] - tol_t && t <= r[1] + tol_t;
                if !inside(sim.t_sbp, a) || !inside(sim.t_dbp, b) {
                    time_viol += 1;
                }
            }
            None => time_viol += 1,
        }
    }
    check(
        bound_viol == 0 && time_viol == 0 && n_read > 900,
        format!("{n_read}/{n_seg} segments simulated; bound violations {bound_viol}; crossing-time mismatches vs 1000x scan {time_viol}"),
    )
}

fn cohort(seed: u64, subjects: usize, duration_s: f64, tweak: impl Fn(&mut SubjectParams)) -> Vec<WaveformRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..subjects)
        .map(|i| {
            let mut p = SubjectParams::random(format!("c{i:02}"), &mut rng);
            p.duration_s = duration_s;
            tweak(&mut p);
            synthesize(&p, &[], &mut rng).unwrap()
        })
        .collect()
}

fn c4_deflation_rate() -> Outcome {
    let records = cohort(4, 10, 600.0, |p| {
        p.heart_rate_hz = 1.2;
        p.resp_am_depth = 0.1;
    });
    let acc = pipeline::accepted(&pipeline::run_qc(&records));
    let sums = sweep_deflation_rates(&acc, &[2.5, 10.0], |_| 180.0).unwrap();
    let (slow, fast) = (sums[0].sbp_sd.unwrap(), sums[1].sbp_sd.unwrap());
    check(
        fast > slow,
        format!(
            "SBP error SD {slow:.2} mmHg at 2.5 mmHg/s vs {fast:.2} mmHg at 10 mmHg/s ({} segments)",
            acc.len()
        ),
    )
}

fn c5_respiration_psd() -> Outcome {
    let records = cohort(5, 10, 300.0, |p| {
        p.resp_rate_hz = 0.3;
        p.resp_am_depth = 0.1;
    });
    let acc = pipeline::accepted(&pipeline::run_qc(&records));
    let resp = match pipeline::run_respiration(&acc, &PipelineConfig::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let df = resp.cohort.df();
    let peak = resp.dominant.peak_hz;
    let frac = resp.dominant.band_fraction;
    check(
        (peak - 0.3).abs() <= df + 1e-12 && frac > 0.8,
        format!(
            "cohort peak {peak:.4} Hz (0.3 +/- {df:.4}), band fraction {:.1}-{:.1} Hz = {frac:.3}",
            RESPIRATORY_BAND_HZ.0, RESPIRATORY_BAND_HZ.1
        ),
    )
}

fn qc_segment(samples: Vec<f64>, fs: f64, hyper: bool) -> SegmentStatus {
    let seg = Segment {
        subject_id: "q".into(),
        index: 0,
        samples,
        sampling_rate_hz: fs,
        hypertensive: hyper,
        status: SegmentStatus::Pending,
        truth: None,
    };
    qc_filter_with(seg, hyper, &QcThresholds::default()).status
}

fn c6_qc_rules() -> Outcome {
    use bpcorr::quality_control::RejectReason::*;
    let mut failures = Vec::new();
    let mut cases = 0;
    for fs in [125.0, 250.0, 500.0] {
        let n = (60.0 * fs) as usize;
        let base: Vec<f64> = (0..n)
            .map(|i| 100.0 + 30.0 * (i as f64 * 7.3 / fs).sin() + 1e-3 * (i as f64).sqrt())
            .collect();
        let min_run = (0.5 * fs).ceil() as usize;
        for ms in [496usize, 504] {
            let run = ms * fs as usize / 1000;
            for start in [0, 1, n / 2, n - run - 1, n - run] {
                let mut x = base.clone();
                let v = x[start];
                x[start..start + run].fill(v);
                let want = if ms == 504 {
                    SegmentStatus::Rejected(Saturation)
                } else {
                    SegmentStatus::Accepted
                };
                cases += 1;
                if qc_segment(x, fs, false) != want {
                    failures.push(format!("{ms} ms plateau at {start} (fs {fs})"));
                }
            }
        }
        for run in 1..=2 * min_run {
            let mut x = base.clone();
            let v = x[n / 3];
            x[n / 3..n / 3 + run].fill(v);
            let want = if run >= min_run {
                SegmentStatus::Rejected(Saturation)
            } else {
                SegmentStatus::Accepted
            };
            cases += 1;
            if qc_segment(x, fs, false) != want {
                failures.push(format!("run {run} samples (fs {fs})"));
            }
        }
    }
    let base: Vec<f64> = (0..7500).map(|i| 100.0 + 30.0 * (i as f64 * 0.05).sin()).collect();
    let with = |v: f64| {
        let mut x = base.clone();
        x[4000] = v;
        x
    };
    let range_cases = [
        (24.9, false, SegmentStatus::Rejected(Range)),
        (25.0, false, SegmentStatus::Accepted),
        (180.0, false, SegmentStatus::Accepted),
        (180.1, false, SegmentStatus::Rejected(Range)),
        (200.0, false, SegmentStatus::Rejected(Range)),
        (200.0, true, SegmentStatus::Accepted),
        (230.0, true, SegmentStatus::Accepted),
        (230.1, true, SegmentStatus::Rejected(Range)),
        (24.9, true, SegmentStatus::Rejected(Range)),
    ];
    for (v, hyper, want) in range_cases {
        cases += 1;
        if qc_segment(with(v), 125.0, hyper) != want {
            failures.push(format!("sample {v} hyper={hyper}"));
        }
    }
    check(
        failures.is_empty(),
        format!("{cases} boundary cases, failures: {failures:?}"),
    )
}

fn oracle212(b: &[u8]) -> Vec<i32> {
    let bit = |i: usize| ((b[i / 8] >> (i % 8)) & 1) as i32;
    let mut out = Vec::new();
    for t in 0..b.len() / 3 {
        let base = t * 24;
        let mut s1 = 0;
        let mut s2 = 0;
        for k in 0..8 {
            s1 |= bit(base + k) << k;
            s2 |= bit(base + 16 + k) << k;
        }
        for k in 0..4 {
            s1 |= bit(base + 8 + k) << (8 + k);
            s2 |= bit(base + 12 + k) << (8 + k);
        }
        for s in [s1, s2] {
            out.push(if s & 0x800 != 0 { s - 4096 } else { s });
        }
    }
    out
}

fn oracle16(b: &[u8]) -> Vec<i32> {
    (0..b.len() / 2)
        .map(|i| {
            let mut v = 0i32;
            for k in 0..16 {
                let byte = b[2 * i + k / 8];
                v |= (((byte >> (k % 8)) & 1) as i32) << k;
            }
            if v >= 32768 {
                v - 65536
            } else {
                v
            }
        })
        .collect()
}

fn c7_parser_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let triplets = rng.random_range(0..=32);
        let b: Vec<u8> = (0..triplets * 3).map(|_| rng.random()).collect();
        if decode_format212(&b).ok() != Some(oracle212(&b)) {
            mismatches += 1;
        }
        let words = rng.random_range(0..=48);
        let b: Vec<u8> = (0..words * 2).map(|_| rng.random()).collect();
        if decode_format16(&b).ok() != Some(oracle16(&b)) {
            mismatches += 1;
        }
        let n = 2 * rng.random_range(0..=32);
        let s: Vec<i32> = (0..n).map(|_| rng.random_range(-2048..=2047)).collect();
        if encode_format212(&s).and_then(|e| decode_format212(&e)).ok() != Some(s) {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("100000 buffers per decoder plus round trips, mismatches {mismatches}"),
    )
}

fn mimic_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("BPCORR_MIMIC_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mimic"));
    let has_records = std::fs::read_dir(&dir)
        .ok()?
        .flatten()
        .any(|e| e.path().extension().is_some_and(|x| x == "hea" || x == "csv"));
    has_records.then_some(dir)
}

fn c8_real_data_reproduction() -> Outcome {
    let Some(dir) = mimic_dir() else {
        return Outcome::Skip("no MIMIC records (set BPCORR_MIMIC_DIR or populate data/mimic)".into());
    };
    let mut cfg = PipelineConfig {
        data: vec![dir.clone()],
        protocol: Protocol::InSample,
        ..PipelineConfig::default()
    };
    if let Ok(text) = std::fs::read_to_string(dir.join("hypertensive.txt")) {
        cfg.hypertensive = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
    }
    let a = match pipeline::run(&cfg) {
        Ok(a) => a,
        Err(e) => return Outcome::Fail(format!("pipeline failed: {e}")),
    };
    let mu = a.noise.model.mu;
    let row = |m: Method, n: usize| a.evaluation.table.iter().find(|r| r.method == m && r.n == n).cloned();
    let (Some(ls1), Some(ls5), Some(ml1), Some(ml5)) = (
        row(Method::Ls, 1),
        row(Method::Ls, 5),
        row(Method::Ml, 1),
        row(Method::Ml, 5),
    ) else {
        return Outcome::Fail("table rows missing".into());
    };
    let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
    let signs = mu[0] < 0.0 && mu[1] > 0.0;
    let near = (mu[0] + 9.29).abs() <= 3.0 && (mu[1] - 6.29).abs() <= 3.0;
    let mae_flat =
        (get(ls1.sbp_mae) - get(ls5.sbp_mae)).abs() <= 0.5 && (get(ls1.dbp_mae) - get(ls5.dbp_mae)).abs() <= 0.5;
    let sd_down = get(ls5.sbp_sd) < get(ls1.sbp_sd) && get(ls5.dbp_sd) < get(ls1.dbp_sd);
    let ml_better = [(&ml1, &ls1), (&ml5, &ls5)]
        .iter()
        .all(|(m, l)| get(m.sbp_mae) < get(l.sbp_mae) && get(m.dbp_mae) < get(l.dbp_mae));
    check(
        signs && near && mae_flat && sd_down && ml_better,
        format!(
            "mu = ({:.2}, {:.2}); signs {signs}, within 3 mmHg {near}, LS MAE flat {mae_flat}, LS SD decreasing {sd_down}, ML MAE < LS MAE {ml_better}",
            mu[0], mu[1]
        ),
    )
}

fn run_cli(out: &Path) -> (Duration, std::process::Output) {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_bpcorr"))
        .current_dir(&root)
        .args(["--config", "configs/default.toml", "--out"])
        .arg(out)
        .arg("run")
        .output()
        .expect("spawn bpcorr");
    (t.elapsed(), o)
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let (t1, o1) = run_cli(&a);
    let (t2, o2) = run_cli(&b);
    if !o1.status.success() || !o2.status.success() {
        return Outcome::Fail(format!("run failed: {}", String::from_utf8_lossy(&o1.stderr)));
    }
    let ra = std::fs::read(a.join("report.json")).unwrap();
    let rb = std::fs::read(b.join("report.json")).unwrap();
    let fast = t2 < 2 * t1.max(Duration::from_millis(1));
    check(
        ra == rb && fast,
        format!(
            "report.json identical {} ({} bytes); runs {:.2} s and {:.2} s",
            ra == rb,
            ra.len(),
            t1.as_secs_f64(),
            t2.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Outcome, f64);
    let criteria: [Criterion; 9] = [
        (1, "estimator identities", c1_estimator_identities, 5.0),
        (2, "Monte Carlo consistency", c2_monte_carlo, 30.0),
        (3, "oscillometry bounds", c3_oscillometry_bounds, 60.0),
        (4, "deflation-rate sensitivity", c4_deflation_rate, f64::INFINITY),
        (5, "respiration PSD", c5_respiration_psd, 30.0),
        (6, "QC rules", c6_qc_rules, 1.0),
        (7, "parser oracle", c7_parser_oracle, 10.0),
        (8, "real-data reproduction", c8_real_data_reproduction, f64::INFINITY),
        (9, "determinism", c9_determinism, f64::INFINITY),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f, limit) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        let timing = if limit.is_finite() {
            format!("{secs:.2} s, limit {limit} s")
        } else {
            format!("{secs:.2} s")
        };
        let (tag, detail) = match outcome {
            Outcome::Pass(d) if secs <= limit => ("PASS", d),
            Outcome::Pass(d) => ("FAIL", format!("{d}; over time limit")),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("criterion {id} {tag} ({name}): {detail} [{timing}]");
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

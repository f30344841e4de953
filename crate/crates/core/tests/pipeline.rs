use std::path::PathBuf;
use std::sync::OnceLock;

use bpcorr::config::{PipelineConfig, Protocol};
use bpcorr::evaluation::Method;
use bpcorr::pipeline::{self, RunArtifacts};
use bpcorr::report::{build_report, Report};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&root().join("configs/default.toml")).unwrap();
    cfg.data = vec![root().join("data/synthetic")];
    cfg
}

fn artifacts() -> &'static RunArtifacts {
    static A: OnceLock<RunArtifacts> = OnceLock::new();
    A.get_or_init(|| pipeline::run(&corpus_config()).unwrap())
}

fn report() -> &'static Report {
    static R: OnceLock<Report> = OnceLock::new();
    R.get_or_init(|| build_report(artifacts()).unwrap())
}

#[test]
fn report_has_every_section() {
    let json = report().to_json();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in [
        "run",
        "noise_model",
        "diagnostics",
        "table",
        "table_by_subject",
        "sd_ratio",
        "bland_altman",
        "error_pdf",
        "psd",
        "qc",
        "simulation",
    ] {
        assert!(value.get(key).is_some(), "missing {key}");
    }
    assert!(!json.contains("NaN"));
}

#[test]
fn report_round_trips_exactly() {
    let json = report().to_json();
    let back = Report::from_json(&json).unwrap();
    assert_eq!(&back, report());
    assert_eq!(back.to_json(), json);
}

#[test]
fn table_covers_methods_and_group_sizes() {
    let table = &report().table;
    assert_eq!(table.len(), 4);
    for m in [Method::Ls, Method::Ml] {
        for n in [1, 5] {
            let row = table.iter().find(|r| r.method == m && r.n == n).expect("row");
            assert!(row.count > 0);
            for v in [row.sbp_mae, row.sbp_sd, row.dbp_mae, row.dbp_sd] {
                assert!(v.unwrap().is_finite());
            }
        }
    }
}

#[test]
fn in_sample_ls_single_reading_bias_equals_mu() {
    let a = artifacts();
    let mu = a.noise.model.mu;
    let ls1: Vec<_> = a
        .evaluation
        .samples
        .iter()
        .filter(|s| s.method == Method::Ls && s.n == 1)
        .collect();
    assert_eq!(ls1.len(), a.simulation.readings.len());
    let k = ls1.len() as f64;
    let mean = [
        ls1.iter().map(|s| s.sbp_error).sum::<f64>() / k,
        ls1.iter().map(|s| s.dbp_error).sum::<f64>() / k,
    ];
    assert!((mean[0] - mu[0]).abs() < 1e-9 && (mean[1] - mu[1]).abs() < 1e-9);
}

#[test]
fn ml_samples_are_ls_shifted_by_mu() {
    let a = artifacts();
    let mu = a.noise.model.mu;
    for n in [1, 5] {
        let ls: Vec<_> = a
            .evaluation
            .samples
            .iter()
            .filter(|s| s.method == Method::Ls && s.n == n)
            .collect();
        let ml: Vec<_> = a
            .evaluation
            .samples
            .iter()
            .filter(|s| s.method == Method::Ml && s.n == n)
            .collect();
        assert_eq!(ls.len(), ml.len());
        for (l, m) in ls.iter().zip(&ml) {
            assert_eq!(l.subject_id, m.subject_id);
            assert!((m.sbp_error - (l.sbp_error - mu[0])).abs() < 1e-9);
            assert!((m.dbp_error - (l.dbp_error - mu[1])).abs() < 1e-9);
        }
    }
}

#[test]
fn bland_altman_bias_matches_fitted_mean() {
    let r = report();
    assert_eq!(r.bland_altman.entries.len(), 1);
    let e = &r.bland_altman.entries[0];
    assert_eq!(e.label, "default");
    let (sbp, dbp) = (e.sbp.unwrap(), e.dbp.unwrap());
    assert!((sbp.bias - r.noise_model.mu[0]).abs() < 1e-12);
    assert!((dbp.bias - r.noise_model.mu[1]).abs() < 1e-12);
    assert!((sbp.loa_high - sbp.loa_low - 2.0 * 1.96 * sbp.sd).abs() < 1e-9);
}

#[test]
fn qc_attrition_of_bundled_corpus() {
    let qc = &report().qc;
    assert_eq!(qc.total, 90);
    assert_eq!(qc.accepted, 86);
}

#[test]
fn psd_peak_in_respiratory_band() {
    let psd = &report().psd;
    assert!(psd.peak_hz >= 0.2 && psd.peak_hz <= 0.4);
    assert!(psd.band_fraction > 0.8);
}

#[test]
fn empty_results_are_an_error() {
    let mut a = pipeline::run(&corpus_config()).unwrap();
    a.simulation.readings.clear();
    a.evaluation.samples.clear();
    assert!(build_report(&a).is_err());
}

#[test]
fn holdout_subsets_are_disjoint() {
    let readings = &artifacts().simulation.readings;
    let split = pipeline::split_subjects(readings, Protocol::Holdout(3), 9).unwrap();
    assert_eq!(split.fit.len(), 3);
    assert_eq!(split.eval.len(), 3);
    assert!(split.fit.iter().all(|s| !split.eval.contains(s)));
    let again = pipeline::split_subjects(readings, Protocol::Holdout(3), 9).unwrap();
    assert_eq!(split.fit, again.fit);
    assert!(pipeline::split_subjects(readings, Protocol::Holdout(6), 9).is_err());
}

#[test]
fn holdout_run_fits_only_on_fit_subjects() {
    let mut cfg = corpus_config();
    cfg.protocol = Protocol::Holdout(3);
    let a = pipeline::run(&cfg).unwrap();
    let fit = pipeline::subset(&a.simulation.readings, &a.split.fit);
    assert_eq!(a.noise.model.n_pairs, fit.len());
    assert!(a
        .evaluation
        .samples
        .iter()
        .all(|s| a.split.eval.contains(&s.subject_id)));
}

#[test]
fn per_subject_models_use_only_that_subjects_pairs() {
    let readings = &artifacts().simulation.readings;
    let models = pipeline::fit_noise_by_subject(readings);
    assert_eq!(models.len(), 6);
    for (id, m) in &models {
        let own: Vec<_> = readings.iter().filter(|r| &r.simulated.subject_id == id).collect();
        assert_eq!(m.n_pairs, own.len());
        let mean = own.iter().map(|r| r.error()[0]).sum::<f64>() / own.len() as f64;
        assert!((m.mu[0] - mean).abs() < 1e-9);
    }
}

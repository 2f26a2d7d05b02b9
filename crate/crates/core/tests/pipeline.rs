use std::fs;
use std::path::Path;

use waverom::harness::{
    export_field, load_data, make_data, rom_from_data, run_experiment, run_inversion, Experiment, ExperimentConfig,
    ModelKind, Report,
};
use waverom::inversion::{objective_rom, Mode};
use waverom::rom::guess_factor;

const SMALL: &str = r#"
name = "small"

[grid]
width = 1.2
depth = 0.9
nx = 16
ny = 12

[medium]
model = "layered-wedge"
c_o = 1.0
rho_o = 1.0

[array]
sensors = 2
x_start = 0.4
x_end = 0.8
depth = 0.1

[pulse]
nu = 6.0
bandwidth = 4.0

[rom]
n_t = 5
dt = 0.08
rank = "auto"
noise_level = 0.02
seed = 3

[inversion]
nbx = 3
nby = 2
layers = [3, 5]
iterations = 2
gamma = 0.1
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn without_timings(mut r: Report) -> Report {
    r.data_seconds = 0.0;
    for m in &mut r.modes {
        m.runtime_seconds = 0.0;
    }
    r
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap()
}

#[test]
fn replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let exp = Experiment::new(small()).unwrap();
    let first = run_experiment(&exp, &a).unwrap();

    // rerun from nothing but the persisted config
    let again = Experiment::new(ExperimentConfig::load(&a.join("config.toml")).unwrap()).unwrap();
    let second = run_experiment(&again, &b).unwrap();

    for f in [
        "trajectory_rom.csv",
        "trajectory_fwi.csv",
        "eta_rom.bin",
        "eta_fwi.bin",
        "data_clean.bin",
        "data_noisy.bin",
        "rom_r.bin",
        "rom_c.pgm",
        "fwi_rho.bin",
    ] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_eq!(without_timings(first.clone()), without_timings(second));
    let loaded = Report::load(&a).unwrap();
    assert_eq!(loaded, first);
    assert_eq!(loaded.summary(), first.summary());
    assert_eq!(first.modes.len(), 2);
    assert_eq!(first.modes[0].iterations, 4);
}

#[test]
fn persisted_data_rebuild_the_rom() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::new(small()).unwrap();
    let report = run_experiment(&exp, tmp.path()).unwrap();
    let clean = load_data(&tmp.path().join("data_clean.bin")).unwrap();
    let noisy = load_data(&tmp.path().join("data_noisy.bin")).unwrap();
    let bundle = make_data(&exp).unwrap();
    assert_eq!(clean, bundle.clean);
    assert_eq!(Some(noisy.clone()), bundle.noisy);
    assert!((report.realized_noise_ratio / 0.02 - 1.0).abs() < 0.01);
    assert_eq!(noisy.noise_level, 0.02);
    let f = rom_from_data(&noisy, exp.config.rom.rank).unwrap();
    let res = run_inversion(&exp, &noisy, Some(&f), Mode::Rom).unwrap();
    let m = report.mode(Mode::Rom).unwrap();
    assert_eq!(res.trajectory.last().unwrap().objective, m.final_objective);
}

#[test]
fn homogeneous_truth_stays_at_reference() {
    let mut cfg = small();
    cfg.medium.model = ModelKind::Homogeneous;
    cfg.rom.noise_level = 0.0;
    let exp = Experiment::new(cfg).unwrap();
    let data = make_data(&exp).unwrap();
    assert!(data.noisy.is_none());
    let f = rom_from_data(&data.clean, exp.config.rom.rank).unwrap();
    for mode in [Mode::Rom, Mode::Fwi] {
        let res = run_inversion(&exp, &data.clean, Some(&f), mode).unwrap();
        assert!(res.initial_objective < 1e-20, "{mode}: {}", res.initial_objective);
        assert!(res.eta.iter().all(|v| v.abs() < 1e-8), "{mode}: {:?}", res.eta);
    }
}

#[test]
fn rom_factor_does_not_depend_on_tau() {
    let mut cfg = small();
    cfg.rom.noise_level = 0.0;
    let exp = Experiment::new(cfg.clone()).unwrap();
    let data = make_data(&exp).unwrap().clean;
    let f = rom_from_data(&data, cfg.rom.rank).unwrap();
    let sim = cfg.sim().unwrap();
    cfg.rom.tau = Some(2.0 * sim.pulse.t_s);
    let shifted = cfg.sim().unwrap();
    let r1 = guess_factor(&exp.truth, &f, &sim, None).unwrap();
    let r2 = guess_factor(&exp.truth, &f, &shifted, None).unwrap();
    assert!((r1.matrix() - r2.matrix()).norm() <= 1e-6 * r1.norm());
    assert!((r1.matrix() - f.r.matrix()).norm() <= 1e-10 * r1.norm());
    let data2 = shifted.data(&exp.truth).unwrap();
    for (a, b) in data.d.iter().zip(&data2.d) {
        assert!((a - b).norm() <= 1e-9 * data.d[0].norm());
    }
}

#[test]
fn objective_nests_by_layer() {
    let mut cfg = small();
    cfg.rom.noise_level = 0.0;
    let exp = Experiment::new(cfg).unwrap();
    let data = make_data(&exp).unwrap().clean;
    let f = rom_from_data(&data, exp.config.rom.rank).unwrap();
    let sim = exp.config.sim().unwrap();
    let param = exp.config.parameterization().unwrap();
    let eta = vec![0.0; param.dim()];
    let values: Vec<f64> = (1..=f.rank)
        .map(|k| objective_rom(&eta, &f, k, &sim, &param).unwrap().0)
        .collect();
    for w in values.windows(2) {
        assert!(w[1] >= w[0], "{values:?}");
    }
}

#[test]
fn imported_truth_matches_the_procedural_one() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = Experiment::new(small()).unwrap();
    let grid = exp.config.grid().unwrap();
    let path = tmp.path().join("wedge.bin");
    export_field(&path, &exp.truth, &grid).unwrap();
    let mut cfg = small();
    cfg.medium.model = ModelKind::File;
    cfg.medium.path = Some("wedge.bin".into());
    let cfg_path = tmp.path().join("exp.toml");
    fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let from_file = Experiment::new(ExperimentConfig::load(&cfg_path).unwrap()).unwrap();
    assert_eq!(from_file.truth, exp.truth);

    cfg.medium.path = Some(tmp.path().join("missing.bin"));
    let err = Experiment::new(cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

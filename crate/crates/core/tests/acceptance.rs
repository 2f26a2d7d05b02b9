//! Acceptance criteria 1 to 8. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting. The line goes straight to the stdout handle, which
//! the test harness does not capture, so it shows in a plain `cargo test`.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use waverom::acquisition::{add_noise, data_matrices, record_response, DataMatrices, Pulse, Sampling, SourceArray};
use waverom::blockla::{block_cholesky, is_block_upper_hessenberg};
use waverom::harness::{make_data, probe, rom_from_data, run_inversion, Experiment, RankName, RankSpec};
use waverom::inversion::{
    fd_jacobian, objective_fwi, objective_rom, realize_medium, relative_model_error, InversionError, Mode,
    Parameterization,
};
use waverom::rom::{assemble_mass, assemble_stiffness, build_rom, rom_snapshots, SimConfig};
use waverom::wavesim::{snapshot_gram, Grid, Integrator, MediumModel};

const N_T: usize = 10;

fn report(n: usize, ok: bool, detail: String) {
    let line = format!("criterion {n}: {} {detail}\n", if ok { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// 48 × 32 cells over 2.4 × 1.6 km, three sensors, one speed and one
/// density inclusion.
fn instance() -> (SimConfig, MediumModel) {
    let grid = Grid::covering(2.4, 1.6, 48, 32).unwrap();
    let array = SourceArray::line(3, 0.8, 1.6, 0.2);
    let pulse = Pulse::default();
    let sim = SimConfig {
        grid,
        array,
        pulse,
        sampling: Sampling::for_pulse(&pulse, N_T),
        integrator: Integrator::Chebyshev,
        scheme: Default::default(),
        tau: None,
    };
    let medium = MediumModel::from_fn(&grid, 1.0, 1.0, |x, y| {
        let c = if (x - 0.9).hypot(y - 0.8) < 0.2 { 1.5 } else { 1.0 };
        let rho = if (x - 1.5).hypot(y - 0.8) < 0.2 { 1.5 } else { 1.0 };
        (c, rho)
    })
    .unwrap();
    (sim, medium)
}

fn recorded(sim: &SimConfig, medium: &MediumModel) -> DataMatrices {
    let rec = record_response(medium, &sim.grid, &sim.array, &sim.pulse, &sim.sampling, sim.integrator).unwrap();
    data_matrices(&rec, sim.sampling.dt, N_T).unwrap()
}

#[test]
fn criterion_1_data_equals_snapshot_gram() {
    let start = Instant::now();
    let (sim, medium) = instance();
    let data = recorded(&sim, &medium);
    let mass = assemble_mass(&data.d, N_T).unwrap();
    let stiff = assemble_stiffness(&data.d, N_T).unwrap();
    let set = sim.snapshots(&medium, N_T + 1).unwrap();
    let (m_oracle, s_oracle) = snapshot_gram(&set).unwrap();
    let em = rel(mass.matrix(), m_oracle.matrix());
    let es = rel(stiff.matrix(), s_oracle.matrix());
    let secs = start.elapsed().as_secs_f64();
    let ok = em < 1e-6 && es < 1e-6 && secs < 60.0;
    report(1, ok, format!("mass {em:.2e}, stiffness {es:.2e}, {secs:.1} s"));
    assert!(ok);
}

#[test]
fn criterion_2_rom_interpolates_data() {
    let (sim, medium) = instance();
    let data = recorded(&sim, &medium);
    let f = rom_from_data(&data, RankSpec::Named(RankName::Auto)).unwrap();
    let snaps = rom_snapshots(&f, f.rank);
    let worst = (0..f.rank)
        .map(|j| (snaps[0].transpose() * &snaps[j] - &data.d[j]).norm() / data.d[0].norm())
        .fold(0.0, f64::max);
    let ok = worst < 1e-8;
    report(2, ok, format!("rank {} of {N_T}, worst relative mismatch {worst:.2e}", f.rank));
    assert!(ok);
}

#[test]
fn criterion_3_propagator_structure() {
    let (sim, medium) = instance();
    let data = recorded(&sim, &medium);
    let f = rom_from_data(&data, RankSpec::Named(RankName::Auto)).unwrap();
    let rep = is_block_upper_hessenberg(&f.p, 1e-8);
    let m = f.block_size();
    let k = (f.rank - 1) * m;
    let ptp = f.p.matrix().transpose() * f.p.matrix();
    let id = DMatrix::<f64>::identity(f.rank * m, f.rank * m);
    let unitary = (ptp.columns(0, k) - id.columns(0, k)).abs().max();
    let ok = rep.is_hessenberg && rep.unreduced && unitary < 1e-7;
    report(
        3,
        ok,
        format!(
            "rank {}, below-subdiagonal {:.2e}, smallest subdiagonal {:.2e}, PᵀP deviation {unitary:.2e}",
            f.rank, rep.max_violation, rep.min_subdiagonal
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_4_physics_invariants() {
    let (sim, medium) = instance();
    let set = sim.snapshots(&medium, N_T + 1).unwrap();
    let e0 = set.energy(0);
    let drift = (0..set.n_levels()).map(|j| (set.energy(j) - e0).abs() / e0).fold(0.0, f64::max);

    let rec = record_response(&medium, &sim.grid, &sim.array, &sim.pulse, &sim.sampling, sim.integrator).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for a in &rec.response {
        num += (a - a.transpose()).norm_squared();
        den += a.norm_squared();
    }
    let recip = (num / den).sqrt();

    let factor = |tau: f64| {
        let s = SimConfig { tau: Some(tau), ..sim.clone() };
        let (mass, _) = snapshot_gram(&s.snapshots(&medium, N_T + 1).unwrap()).unwrap();
        block_cholesky(&mass).unwrap()
    };
    let r1 = factor(sim.pulse.t_s);
    let r2 = factor(2.0 * sim.pulse.t_s);
    let tau_err = rel(r2.matrix(), r1.matrix());

    let ok = drift < 1e-8 && recip < 1e-6 && tau_err < 1e-6;
    report(4, ok, format!("energy drift {drift:.2e}, reciprocity {recip:.2e}, tau change of R {tau_err:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_5_noise_calibration() {
    let (sim, medium) = instance();
    let rec = record_response(&medium, &sim.grid, &sim.array, &sim.pulse, &sim.sampling, sim.integrator).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for b in [1e-2, 3e-2] {
        let ratio = add_noise(&rec, b, 11).unwrap().noise_ratio();
        ok &= (ratio / b - 1.0).abs() < 0.01;
        detail.push(format!("b {b:.0e} -> {ratio:.5e}"));
    }
    // the harness path used by the crack recipes
    for name in ["cracks1", "cracks2"] {
        let mut exp = Experiment::by_name(name).unwrap();
        exp.config.rom.n_t = 4;
        let b = exp.config.rom.noise_level;
        let ratio = make_data(&exp).unwrap().noise_ratio;
        ok &= (ratio / b - 1.0).abs() < 0.01;
        detail.push(format!("{name} {ratio:.5e}"));
    }
    report(5, ok, detail.join(", "));
    assert!(ok);
}

#[test]
fn criterion_6_exact_fit_and_jacobian() {
    let (sim, _) = instance();
    let param = Parameterization::covering(&sim.grid, 5, 4, 1.0, 1.0).with_taper(&sim.grid, &sim.array, 2);
    let n = param.n_basis();
    let mut eta = vec![0.0; 2 * n];
    eta[n / 2] = 0.4;
    eta[n + n / 2 + 1] = 0.3;
    let truth = realize_medium(&eta, &param, &sim.grid).unwrap().medium;
    let data = sim.data(&truth).unwrap();
    let mass = assemble_mass(&data.d, N_T).unwrap();
    let stiff = assemble_stiffness(&data.d, N_T).unwrap();
    let f = build_rom(&mass, &stiff, N_T).unwrap();
    let zero = vec![0.0; 2 * n];
    let rom_scale = objective_rom(&zero, &f, N_T, &sim, &param).unwrap().0;
    let rom_fit = objective_rom(&eta, &f, N_T, &sim, &param).unwrap().0 / rom_scale;
    let fwi_scale = objective_fwi(&zero, &data, N_T, &sim, &param).unwrap().0;
    let fwi_fit = objective_fwi(&eta, &data, N_T, &sim, &param).unwrap().0 / fwi_scale;

    let toy = |x: &[f64]| -> Result<DVector<f64>, InversionError> {
        Ok(DVector::from_vec(vec![
            x[0].sin() * x[1],
            x[0] * x[0] + x[1].exp(),
            x[0] * x[1] * x[2],
            x[2].cos() - x[0],
        ]))
    };
    let x: [f64; 3] = [0.3, -0.7, 1.2];
    let exact = DMatrix::from_row_slice(
        4,
        3,
        &[
            x[0].cos() * x[1],
            x[0].sin(),
            0.0,
            2.0 * x[0],
            x[1].exp(),
            0.0,
            x[1] * x[2],
            x[0] * x[2],
            x[0] * x[1],
            -1.0,
            0.0,
            -x[2].sin(),
        ],
    );
    let base = toy(&x).unwrap();
    let jac = fd_jacobian(&toy, &x, &base, &[1e-6; 3]).unwrap();
    let jerr = rel(&jac, &exact);

    let ok = rom_fit <= 1e-6 && fwi_fit <= 1e-6 && jerr < 1e-4;
    report(6, ok, format!("ROM {rom_fit:.2e}, FWI {fwi_fit:.2e}, Jacobian {jerr:.2e}"));
    assert!(ok);
}

#[test]
fn criterion_7_two_inclusions() {
    let start = Instant::now();
    let exp = Experiment::by_name("two-inclusions").unwrap();
    assert_eq!(exp.config.inversion.solver.iterations, 15);
    assert_eq!((exp.config.inversion.nbx, exp.config.inversion.nby, exp.config.array.sensors), (12, 8, 9));
    let grid = exp.config.grid().unwrap();
    let data = make_data(&exp).unwrap();
    let rom = rom_from_data(&data.clean, exp.config.rom.rank).unwrap();
    let res_rom = run_inversion(&exp, &data.clean, Some(&rom), Mode::Rom).unwrap();
    let res_fwi = run_inversion(&exp, &data.clean, None, Mode::Fwi).unwrap();
    let err_rom = relative_model_error(&res_rom.medium, &exp.truth);
    let err_fwi = relative_model_error(&res_fwi.medium, &exp.truth);
    let (pc, pr) = (&exp.config.probes[0], &exp.config.probes[1]);
    let c_at = probe(&res_rom.medium.c, &grid, pc.x, pc.y);
    let rho_at = probe(&res_rom.medium.rho, &grid, pr.x, pr.y);
    let secs = start.elapsed().as_secs_f64();
    let ok = err_rom < err_fwi && (c_at - 1.5).abs() <= 0.2 && (rho_at - 1.5).abs() <= 0.2 && secs < 1800.0;
    report(
        7,
        ok,
        format!(
            "error ROM {err_rom:.4} vs FWI {err_fwi:.4}, ROM c at {} {c_at:.3}, ROM rho at {} {rho_at:.3}, {secs:.0} s",
            pc.name, pr.name
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_8_layer_causality() {
    let (sim, medium) = instance();
    let data = recorded(&sim, &medium);
    let param = Parameterization::covering(&sim.grid, 4, 3, 1.0, 1.0).with_taper(&sim.grid, &sim.array, 2);
    let mut eta = vec![0.0; param.dim()];
    eta[5] = 0.1;
    eta[param.n_basis() + 6] = -0.05;
    let full = |d: &DataMatrices| {
        let mass = assemble_mass(&d.d, N_T).unwrap();
        let stiff = assemble_stiffness(&d.d, N_T).unwrap();
        build_rom(&mass, &stiff, N_T).unwrap()
    };
    let f = full(&data);
    let mut ok = true;
    let mut changed = 0;
    for k in [2, 5, 8] {
        let mut pert = data.clone();
        for (j, dj) in pert.d.iter_mut().enumerate().skip(k) {
            // small enough to keep M positive definite
            *dj += DMatrix::identity(dj.nrows(), dj.ncols()) * (1e-9 * data.d[0].norm() / (j + 1) as f64);
        }
        let g = full(&pert);
        let (o, r) = objective_rom(&eta, &f, k, &sim, &param).unwrap();
        let (o2, r2) = objective_rom(&eta, &g, k, &sim, &param).unwrap();
        ok &= o.to_bits() == o2.to_bits() && r == r2;
        // one layer further does see the perturbation
        let (o3, _) = objective_rom(&eta, &g, k + 1, &sim, &param).unwrap();
        let (o4, _) = objective_rom(&eta, &f, k + 1, &sim, &param).unwrap();
        if o3 != o4 {
            changed += 1;
        }
    }
    ok &= changed == 3;
    report(8, ok, format!("O_k bit-identical for k = 2, 5, 8; O_(k+1) changed in {changed} of 3"));
    assert!(ok);
}

//! Browser front end. One [`Demo`] holds a small experiment: a medium with
//! one speed and one density bump, its data matrices and (once built) the
//! ROM factor.

use wasm_bindgen::prelude::*;
use waverom::acquisition::{DataMatrices, Pulse, Sampling, SourceArray};
use waverom::blockla::{is_block_upper_hessenberg, sorted_eigenvalues};
use waverom::inversion::{objective_fwi, objective_rom, realize_medium, Parameterization};
use waverom::rom::{assemble_mass, assemble_stiffness, auto_rank, build_rom, RomFactor, SimConfig};
use waverom::{Grid, MediumModel};

const WIDTH: f64 = 2.0;
const DEPTH: f64 = 1.2;
const NX: usize = 32;
const NY: usize = 20;

#[wasm_bindgen]
pub struct Demo {
    sim: SimConfig,
    truth: MediumModel,
    data: DataMatrices,
    param: Parameterization,
    eta_true: Vec<f64>,
    rom: Option<RomFactor>,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Blue through white to red, with white at the reference value.
fn colour(v: f64, reference: f64, lo: f64, hi: f64) -> [u8; 4] {
    let s = if v >= reference {
        if hi > reference { (v - reference) / (hi - reference) } else { 0.0 }
    } else if lo < reference {
        -(reference - v) / (reference - lo)
    } else {
        0.0
    };
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if s >= 0.0 {
        [255, fade(s), fade(s), 255]
    } else {
        [fade(s), fade(s), 255, 255]
    }
}

#[wasm_bindgen]
impl Demo {
    /// Simulates noiseless data for a speed bump peaking near `c_contrast`
    /// and a density bump peaking near `rho_contrast` (reference 1). Both
    /// are basis functions, so the truth lies in the search space.
    #[wasm_bindgen(constructor)]
    pub fn new(c_contrast: f64, rho_contrast: f64, n_t: usize) -> Result<Demo, String> {
        if !(c_contrast > 0.0 && rho_contrast > 0.0) || !(2..=30).contains(&n_t) {
            return Err(format!("need positive contrasts and 2 <= n_t <= 30, got {c_contrast}, {rho_contrast}, {n_t}"));
        }
        let grid = Grid::covering(WIDTH, DEPTH, NX, NY).map_err(err)?;
        let pulse = Pulse::default();
        let sim = SimConfig {
            grid,
            array: SourceArray::line(3, 0.6, 1.4, 0.15),
            pulse,
            sampling: Sampling {
                dt: 0.08,
                ..Sampling::for_pulse(&pulse, n_t)
            },
            integrator: Default::default(),
            scheme: Default::default(),
            tau: None,
        };
        let param = Parameterization::new(&grid, 6, 3, [0.2, 1.8, 0.45, 1.1], 1.0, 1.0).with_taper(&grid, &sim.array, 2);
        let n = param.n_basis();
        let mut eta_true = vec![0.0; 2 * n];
        eta_true[1 + 6] = c_contrast - 1.0;
        eta_true[n + 4 + 6] = rho_contrast - 1.0;
        let truth = realize_medium(&eta_true, &param, &grid).map_err(err)?.medium;
        let data = sim.data(&truth).map_err(err)?;
        Ok(Demo {
            sim,
            truth,
            data,
            param,
            eta_true,
            rom: None,
        })
    }

    pub fn nx(&self) -> usize {
        NX
    }

    pub fn ny(&self) -> usize {
        NY
    }

    pub fn n_excitations(&self) -> usize {
        self.data.n_excitations()
    }

    /// RGBA pixels of `"c"` or `"rho"`, row by row from the surface down.
    pub fn field_rgba(&self, which: &str) -> Result<Vec<u8>, String> {
        let (field, reference) = match which {
            "c" => (&self.truth.c, self.truth.c_o),
            "rho" => (&self.truth.rho, self.truth.rho_o),
            _ => return Err(format!("unknown field `{which}`")),
        };
        let lo = field.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(field.iter().flat_map(|&v| colour(v, reference, lo, hi)).collect())
    }

    /// `D_j[a, b]` for `j = 0..=n_t`.
    pub fn trace(&self, a: usize, b: usize) -> Result<Vec<f64>, String> {
        let m = self.data.n_excitations();
        if a >= m || b >= m {
            return Err(format!("excitation index out of range 0..{m}"));
        }
        Ok(self.data.d.iter().map(|d| d[(a, b)]).collect())
    }

    /// Eigenvalues of the data mass matrix over the largest, descending.
    pub fn mass_spectrum(&self) -> Result<Vec<f64>, String> {
        let mass = assemble_mass(&self.data.d, self.data.n_t()).map_err(err)?;
        let eig = sorted_eigenvalues(&mass);
        let top = eig[0];
        Ok(eig.iter().map(|v| v / top).collect())
    }

    /// Builds the ROM at full rank if the mass matrix allows it, otherwise
    /// at the automatic rank, and returns a one-line summary.
    pub fn build_rom(&mut self) -> Result<String, String> {
        let n_t = self.data.n_t();
        let mass = assemble_mass(&self.data.d, n_t).map_err(err)?;
        let stiff = assemble_stiffness(&self.data.d, n_t).map_err(err)?;
        let f = match build_rom(&mass, &stiff, n_t) {
            Ok(f) => f,
            Err(_) => build_rom(&mass, &stiff, auto_rank(&mass, 0.0)).map_err(err)?,
        };
        let hess = is_block_upper_hessenberg(&f.p, 1e-8);
        let m = f.block_size();
        let snaps = waverom::rom::rom_snapshots(&f, f.rank);
        let interp = (0..f.rank)
            .map(|j| (snaps[0].transpose() * &snaps[j] - &self.data.d[j]).norm() / self.data.d[0].norm())
            .fold(0.0, f64::max);
        let summary = format!(
            "rank {} of {n_t} ({} x {} blocks), block Hessenberg residue {:.1e}, interpolation error {:.1e}",
            f.rank, m, m, hess.max_violation, interp
        );
        self.rom = Some(f);
        Ok(summary)
    }

    /// ROM and data-misfit objectives along `η = s·η_true` for `points`
    /// values of `s` in `[0, 2]`; both vanish at `s = 1`, which odd `points`
    /// hit exactly. Returns `[s, O_rom, O_fwi]` triples, each objective
    /// scaled by its value at `s = 0`.
    pub fn objective_scan(&mut self, points: usize) -> Result<Vec<f64>, String> {
        if self.rom.is_none() {
            self.build_rom()?;
        }
        let f = self.rom.as_ref().expect("built above");
        let n_t = self.data.n_t();
        let points = points.max(2);
        let mut raw = Vec::with_capacity(3 * points);
        for i in 0..points {
            let s = 2.0 * i as f64 / (points - 1) as f64;
            let eta: Vec<f64> = self.eta_true.iter().map(|v| s * v).collect();
            let rom = objective_rom(&eta, f, f.rank, &self.sim, &self.param).map_err(err)?.0;
            let fwi = objective_fwi(&eta, &self.data, n_t, &self.sim, &self.param).map_err(err)?.0;
            raw.extend([s, rom, fwi]);
        }
        let (r0, f0) = (raw[1].max(f64::MIN_POSITIVE), raw[2].max(f64::MIN_POSITIVE));
        for t in raw.chunks_mut(3) {
            t[1] /= r0;
            t[2] /= f0;
        }
        Ok(raw)
    }
}

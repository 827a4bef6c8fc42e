//! Pennes bioheat finite-difference solver over a layered 2D breast
//! cross-section with an optional circular tumor, plus a synthetic
//! thermogram generator so the imaging pipeline can be exercised without
//! external data.
//!
//! Geometry: rows index depth (row 0 = skin surface, last row = body core),
//! columns index the lateral direction. Layers are horizontal strata. The
//! core row is held at a Dirichlet temperature; the surface row exchanges
//! heat with ambient air by convection (or is held fixed); lateral edges
//! are insulated. The steady state is reached by explicit forward-time
//! central-space marching with an automatically computed stable step and
//! harmonic-mean conductivities at material interfaces.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermal::{PatientRecord, Source, Thermogram};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueLayer {
    pub name: String,
    /// Thickness along the depth axis, m.
    pub thickness: f64,
    /// J/(kg·K)
    pub specific_heat: f64,
    /// W/(m·K)
    pub conductivity: f64,
    /// kg/m³
    pub density: f64,
    /// Blood perfusion rate, 1/s.
    pub perfusion: f64,
    /// Metabolic heat generation, W/m³.
    pub metabolic_q: f64,
}

impl TissueLayer {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("thickness", self.thickness),
            ("specific_heat", self.specific_heat),
            ("conductivity", self.conductivity),
            ("density", self.density),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "layer {}: {name} must be > 0, got {v}",
                    self.name
                )));
            }
        }
        if self.perfusion < 0.0 || self.metabolic_q < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "layer {}: perfusion and metabolic_q must be >= 0",
                self.name
            )));
        }
        Ok(())
    }
}

/// The six-layer breast model used throughout the toolkit.
pub fn standard_layers() -> Vec<TissueLayer> {
    let layer = |name: &str, mm: f64, c: f64, k: f64, rho: f64, w: f64, q: f64| TissueLayer {
        name: name.into(),
        thickness: mm * 1e-3,
        specific_heat: c,
        conductivity: k,
        density: rho,
        perfusion: w,
        metabolic_q: q,
    };
    vec![
        layer("epidermis", 0.1, 3589.0, 0.235, 1200.0, 0.0, 0.0),
        layer("papillary dermis", 0.7, 3300.0, 0.445, 1200.0, 0.00018, 368.1),
        layer("reticular dermis", 0.8, 3300.0, 0.445, 1200.0, 0.00126, 368.1),
        layer("fat", 5.0, 2674.0, 0.21, 930.0, 0.00008, 400.0),
        layer("gland", 43.4, 3770.0, 0.48, 1050.0, 0.00054, 700.0),
        layer("muscle", 15.0, 3800.0, 0.48, 1100.0, 0.0027, 700.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorSpec {
    /// m
    pub diameter: f64,
    /// Depth of the tumor center below the surface, m.
    pub center_depth: f64,
    /// Lateral coordinate of the tumor center, m.
    pub center_lateral: f64,
    pub properties: TissueLayer,
}

impl TumorSpec {
    pub fn new(center_depth: f64, center_lateral: f64) -> Self {
        TumorSpec {
            diameter: 0.010,
            center_depth,
            center_lateral,
            properties: TissueLayer {
                name: "tumor".into(),
                thickness: 0.010,
                specific_heat: 3852.0,
                conductivity: 0.48,
                density: 1050.0,
                perfusion: 0.0063,
                metabolic_q: 5000.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BloodParams {
    /// kg/m³
    pub density: f64,
    /// J/(kg·K)
    pub specific_heat: f64,
    /// Arterial blood temperature, °C.
    pub t_arterial: f64,
}

impl Default for BloodParams {
    fn default() -> Self {
        BloodParams {
            density: 1060.0,
            specific_heat: 3770.0,
            t_arterial: 37.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurfaceBc {
    /// Newton cooling: flux h·(T_amb − T_surface) through the skin face.
    Convective { h: f64, t_amb: f64 },
    Dirichlet { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    /// Core (deep) Dirichlet temperature, °C.
    pub t_core: f64,
    pub surface: SurfaceBc,
}

impl Default for BoundaryConditions {
    fn default() -> Self {
        BoundaryConditions {
            t_core: 37.0,
            surface: SurfaceBc::Convective {
                h: 13.5,
                t_amb: 21.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    /// Node spacing along depth (rows), m.
    pub dx: f64,
    /// Node spacing along the lateral axis (columns), m.
    pub dy: f64,
    /// Rows (depth nodes, surface first).
    pub nx: usize,
    /// Columns (lateral nodes).
    pub ny: usize,
    /// Temperature field, °C, shape (nx, ny).
    pub t: Array2<f64>,
    /// Material index per node into `materials`.
    pub material: Array2<usize>,
    pub materials: Vec<TissueLayer>,
    pub blood: BloodParams,
    pub bc: BoundaryConditions,
}

impl SimGrid {
    pub fn validate(&self) -> Result<()> {
        if self.dx <= 0.0 || self.dy <= 0.0 {
            return Err(Error::InvalidArgument("grid spacing must be > 0".into()));
        }
        if self.nx < 3 || self.ny < 1 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 3x1 nodes, got {}x{}",
                self.nx, self.ny
            )));
        }
        if self.t.dim() != (self.nx, self.ny) || self.material.dim() != (self.nx, self.ny) {
            return Err(Error::DimensionMismatch {
                expected: self.nx * self.ny,
                got: self.t.len(),
            });
        }
        if self.t.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite temperature".into()));
        }
        if self.material.iter().any(|&m| m >= self.materials.len()) {
            return Err(Error::InvalidArgument("material index out of range".into()));
        }
        for m in &self.materials {
            m.validate()?;
        }
        Ok(())
    }

    /// Surface (skin) temperature profile, one value per lateral node.
    pub fn surface_profile(&self) -> Vec<f64> {
        self.t.row(0).to_vec()
    }
}

/// Largest stable explicit time step for the grid.
pub fn stable_dt(grid: &SimGrid) -> f64 {
    let min_rho_c = grid
        .materials
        .iter()
        .map(|m| m.density * m.specific_heat)
        .fold(f64::INFINITY, f64::min);
    let max_k = grid
        .materials
        .iter()
        .map(|m| m.conductivity)
        .fold(0.0f64, f64::max);
    let h = grid.dx.min(grid.dy);
    0.9 * min_rho_c * h * h / (4.0 * max_k)
}

/// Build a horizontally stratified grid. Layers thinner than the node
/// spacing are merged into their deeper neighbor (thickness-weighted
/// property average) with a warning. The tumor, when present, overrides a
/// circular region and must sit fully inside the fat/gland strata.
pub fn build_grid(
    layers: &[TissueLayer],
    tumor: Option<&TumorSpec>,
    blood: BloodParams,
    resolution: f64,
    width: f64,
    bc: BoundaryConditions,
) -> Result<SimGrid> {
    if resolution <= 0.0 || width <= 0.0 {
        return Err(Error::InvalidArgument(
            "resolution and width must be > 0".into(),
        ));
    }
    if layers.is_empty() {
        return Err(Error::InvalidArgument("no tissue layers".into()));
    }
    for l in layers {
        l.validate()?;
    }

    // Merge layers thinner than one node spacing into the next layer down.
    let mut merged: Vec<TissueLayer> = Vec::with_capacity(layers.len());
    let mut pending: Option<TissueLayer> = None;
    for layer in layers {
        let layer = match pending.take() {
            Some(thin) => {
                eprintln!(
                    "warning: layer '{}' ({} m) is thinner than the {resolution} m \
                     resolution; merging into '{}'",
                    thin.name, thin.thickness, layer.name
                );
                merge_layers(&thin, layer)
            }
            None => layer.clone(),
        };
        if layer.thickness < resolution {
            pending = Some(layer);
        } else {
            merged.push(layer);
        }
    }
    if let Some(thin) = pending {
        match merged.last_mut() {
            Some(prev) => {
                eprintln!(
                    "warning: layer '{}' ({} m) is thinner than the {resolution} m \
                     resolution; merging into '{}'",
                    thin.name, thin.thickness, prev.name
                );
                *prev = merge_layers(prev, &thin);
            }
            None => merged.push(thin), // single thin layer: keep it as-is
        }
    }

    let depth: f64 = merged.iter().map(|l| l.thickness).sum();
    let nx = (depth / resolution).round() as usize + 1;
    let ny = (width / resolution).round() as usize + 1;
    if nx < 3 {
        return Err(Error::InvalidArgument(
            "domain too shallow for the requested resolution".into(),
        ));
    }

    // Cumulative layer bottoms for node classification.
    let mut bottoms = Vec::with_capacity(merged.len());
    let mut acc = 0.0;
    for l in &merged {
        acc += l.thickness;
        bottoms.push(acc);
    }

    let mut materials = merged.clone();
    let tumor_idx = materials.len();
    if let Some(t) = tumor {
        if t.diameter <= 0.0 {
            return Err(Error::InvalidArgument("tumor diameter must be > 0".into()));
        }
        t.properties.validate()?;
        let r = t.diameter / 2.0;
        // Allowed stratum: the union of fat/gland layers when named, the
        // whole interior otherwise.
        let mut lo = 0.0;
        let mut hi = depth;
        let soft: Vec<bool> = merged
            .iter()
            .map(|l| {
                let n = l.name.to_lowercase();
                n.contains("fat") || n.contains("gland")
            })
            .collect();
        if soft.iter().any(|&s| s) {
            let first = soft.iter().position(|&s| s).unwrap();
            let last = soft.iter().rposition(|&s| s).unwrap();
            if !soft[first..=last].iter().all(|&s| s) {
                return Err(Error::InvalidArgument(
                    "fat/gland layers must be contiguous".into(),
                ));
            }
            lo = if first == 0 { 0.0 } else { bottoms[first - 1] };
            hi = bottoms[last];
        }
        let eps = 1e-12;
        if t.center_depth - r < lo - eps
            || t.center_depth + r > hi + eps
            || t.center_lateral - r < -eps
            || t.center_lateral + r > width + eps
        {
            return Err(Error::InvalidArgument(format!(
                "tumor (depth {} m, radius {r} m) outside the fat/gland region \
                 [{lo}, {hi}] m or the {width} m wide domain",
                t.center_depth
            )));
        }
        materials.push(t.properties.clone());
    }

    let material = Array2::from_shape_fn((nx, ny), |(i, j)| {
        let x = i as f64 * resolution;
        let y = j as f64 * resolution;
        if let Some(t) = tumor {
            let dxc = x - t.center_depth;
            let dyc = y - t.center_lateral;
            if dxc * dxc + dyc * dyc <= (t.diameter / 2.0).powi(2) {
                return tumor_idx;
            }
        }
        bottoms
            .iter()
            .position(|&b| x < b)
            .unwrap_or(merged.len() - 1)
    });

    let grid = SimGrid {
        dx: resolution,
        dy: resolution,
        nx,
        ny,
        t: Array2::from_elem((nx, ny), bc.t_core),
        material,
        materials,
        blood,
        bc,
    };
    grid.validate()?;
    Ok(grid)
}

fn merge_layers(a: &TissueLayer, b: &TissueLayer) -> TissueLayer {
    let total = a.thickness + b.thickness;
    let mix = |fa: f64, fb: f64| (fa * a.thickness + fb * b.thickness) / total;
    TissueLayer {
        name: format!("{}+{}", a.name, b.name),
        thickness: total,
        specific_heat: mix(a.specific_heat, b.specific_heat),
        conductivity: mix(a.conductivity, b.conductivity),
        density: mix(a.density, b.density),
        perfusion: mix(a.perfusion, b.perfusion),
        metabolic_q: mix(a.metabolic_q, b.metabolic_q),
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// One explicit step: writes dT/dt (K/s) for every non-Dirichlet node into
/// `rate` and returns the largest |dT/dt|·dt implied temperature change.
fn step_rates(grid: &SimGrid, rate: &mut Array2<f64>) {
    let (nx, ny) = (grid.nx, grid.ny);
    let t = &grid.t;
    let mats = &grid.materials;
    let midx = &grid.material;
    let pb_cb = grid.blood.density * grid.blood.specific_heat;
    let inv_dx2 = 1.0 / (grid.dx * grid.dx);
    let inv_dy2 = 1.0 / (grid.dy * grid.dy);
    let surface_dirichlet = matches!(grid.bc.surface, SurfaceBc::Dirichlet { .. });

    for i in 0..nx {
        if i + 1 == nx || (i == 0 && surface_dirichlet) {
            for j in 0..ny {
                rate[[i, j]] = 0.0;
            }
            continue;
        }
        for j in 0..ny {
            let m = &mats[midx[[i, j]]];
            let k0 = m.conductivity;
            let t0 = t[[i, j]];
            let mut flux = 0.0; // W/m³

            // Up (toward the surface).
            if i == 0 {
                if let SurfaceBc::Convective { h, t_amb } = grid.bc.surface {
                    flux += h * (t_amb - t0) / grid.dx;
                }
            } else {
                let kn = harmonic(k0, mats[midx[[i - 1, j]]].conductivity);
                flux += kn * (t[[i - 1, j]] - t0) * inv_dx2;
            }
            // Down (toward the core). i + 1 < nx always holds here.
            let kn = harmonic(k0, mats[midx[[i + 1, j]]].conductivity);
            flux += kn * (t[[i + 1, j]] - t0) * inv_dx2;
            // Lateral neighbors; edges are insulated.
            if j > 0 {
                let kn = harmonic(k0, mats[midx[[i, j - 1]]].conductivity);
                flux += kn * (t[[i, j - 1]] - t0) * inv_dy2;
            }
            if j + 1 < ny {
                let kn = harmonic(k0, mats[midx[[i, j + 1]]].conductivity);
                flux += kn * (t[[i, j + 1]] - t0) * inv_dy2;
            }

            let perfusion = pb_cb * m.perfusion * (grid.blood.t_arterial - t0);
            rate[[i, j]] = (flux + perfusion + m.metabolic_q) / (m.density * m.specific_heat);
        }
    }
}

/// March the explicit scheme until the largest per-step temperature change
/// drops below `tol` (K).
pub fn solve_steady(mut grid: SimGrid, tol: f64, max_iters: usize) -> Result<SimGrid> {
    grid.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be > 0".into()));
    }
    // Clamp Dirichlet rows before marching.
    for j in 0..grid.ny {
        grid.t[[grid.nx - 1, j]] = grid.bc.t_core;
        if let SurfaceBc::Dirichlet { t } = grid.bc.surface {
            grid.t[[0, j]] = t;
        }
    }
    let dt = stable_dt(&grid);
    let mut rate = Array2::zeros((grid.nx, grid.ny));
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        step_rates(&grid, &mut rate);
        let mut max_change = 0.0f64;
        for (t, &r) in grid.t.iter_mut().zip(rate.iter()) {
            let change = dt * r;
            *t += change;
            max_change = max_change.max(change.abs());
        }
        residual = max_change;
        if max_change < tol {
            return Ok(grid);
        }
    }
    Err(Error::NoConvergence {
        max_iters,
        residual,
    })
}

/// Largest per-node |ΔT| one further explicit step would make — a cheap
/// energy-balance diagnostic for a converged field.
pub fn energy_residual(grid: &SimGrid) -> f64 {
    let mut rate = Array2::zeros((grid.nx, grid.ny));
    step_rates(grid, &mut rate);
    let dt = stable_dt(grid);
    rate.iter().fold(0.0f64, |acc, r| acc.max((dt * r).abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthRanges {
    /// Tumor center depth range, m.
    pub depth: (f64, f64),
    /// Tumor diameter range, m.
    pub diameter: (f64, f64),
    /// Tumor lateral center range as a fraction of the domain width.
    pub lateral: (f64, f64),
    /// Ambient temperature range, °C.
    pub ambient: (f64, f64),
}

impl Default for SynthRanges {
    fn default() -> Self {
        SynthRanges {
            depth: (0.012, 0.030),
            diameter: (0.008, 0.016),
            lateral: (0.3, 0.7),
            ambient: (18.0, 25.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub patient_id: String,
    pub label: usize,
    pub ambient: f64,
    pub tumor_depth: Option<f64>,
    pub tumor_diameter: Option<f64>,
    pub tumor_lateral: Option<f64>,
    pub resolution: f64,
    pub width: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPatient {
    pub record: PatientRecord,
    pub params: SynthParams,
}

const SYNTH_WIDTH: f64 = 0.06;

/// Simulate labeled pseudo-thermograms: one steady solve per patient with
/// randomized ambient temperature and (for the tumor class) tumor geometry.
/// The surface temperature profile is extruded across the image height and
/// lightly blurred.
pub fn generate_synthetic_set(
    n_healthy: usize,
    n_tumor: usize,
    ranges: SynthRanges,
    resolution: f64,
    out_size: (usize, usize),
    seed: u64,
) -> Result<Vec<SynthPatient>> {
    if n_healthy == 0 || n_tumor == 0 {
        return Err(Error::InvalidArgument(
            "need at least one patient per class".into(),
        ));
    }
    if out_size.0 < 2 || out_size.1 < 2 {
        return Err(Error::InvalidArgument("out_size must be >= 2x2".into()));
    }
    let layers = standard_layers();
    let mut patients = Vec::with_capacity(n_healthy + n_tumor);
    for idx in 0..n_healthy + n_tumor {
        let label = (idx >= n_healthy) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((idx as u64 + 1) << 24));
        let ambient = rng.gen_range(ranges.ambient.0..=ranges.ambient.1);
        let tumor = if label == 1 {
            let mut t = TumorSpec::new(
                rng.gen_range(ranges.depth.0..=ranges.depth.1),
                rng.gen_range(ranges.lateral.0..=ranges.lateral.1) * SYNTH_WIDTH,
            );
            t.diameter = rng.gen_range(ranges.diameter.0..=ranges.diameter.1);
            Some(t)
        } else {
            None
        };
        let bc = BoundaryConditions {
            t_core: 37.0,
            surface: SurfaceBc::Convective {
                h: 13.5,
                t_amb: ambient,
            },
        };
        let grid = build_grid(
            &layers,
            tumor.as_ref(),
            BloodParams::default(),
            resolution,
            SYNTH_WIDTH,
            bc,
        )?;
        let solved = solve_steady(grid, 1e-7, 5_000_000)?;
        let profile = solved.surface_profile();

        let patient_id = format!(
            "synth_{}_{idx:03}",
            if label == 1 { "t" } else { "h" }
        );
        let matrix = extrude_profile(&profile, out_size, &mut rng)?;
        let record = PatientRecord {
            patient_id: patient_id.clone(),
            label,
            thermograms: vec![Thermogram {
                matrix,
                patient_id: patient_id.clone(),
                label,
                source: Source::Raw,
            }],
        };
        patients.push(SynthPatient {
            record,
            params: SynthParams {
                patient_id,
                label,
                ambient,
                tumor_depth: tumor.as_ref().map(|t| t.center_depth),
                tumor_diameter: tumor.as_ref().map(|t| t.diameter),
                tumor_lateral: tumor.as_ref().map(|t| t.center_lateral),
                resolution,
                width: SYNTH_WIDTH,
                seed,
            },
        });
    }
    Ok(patients)
}

fn extrude_profile(
    profile: &[f64],
    out_size: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let (h, w) = out_size;
    let strip = Array2::from_shape_fn((h, profile.len()), |(_, j)| profile[j]);
    let resized = crate::thermal::resize_bilinear(
        &Thermogram {
            matrix: strip,
            patient_id: String::new(),
            label: 0,
            source: Source::Raw,
        },
        h,
        w,
    )?;
    let blurred = gaussian_blur(&resized.matrix, 1.0);
    // Mild sensor-style noise keeps images within a class from being
    // byte-identical; σ is tiny next to the ~1 K tumor signal.
    let noise = rand_distr::Normal::new(0.0, 0.02).unwrap();
    Ok(blurred.mapv(|v| v + rand_distr::Distribution::sample(&noise, rng)))
}

/// Separable Gaussian blur with reflecting edges.
pub fn gaussian_blur(m: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let (h, w) = m.dim();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let xi = reflect(x as isize + ki as isize - radius, w);
                acc += kv * m[[y, xi]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let yi = reflect(y as isize + ki as isize - radius, h);
                acc += kv * tmp[[yi, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Write synthetic patients in the `<root>/<healthy|sick>/<id>/` layout
/// with the simulation parameters echoed to `params.json` per patient.
pub fn write_synthetic_set(patients: &[SynthPatient], root: &Path) -> Result<()> {
    for p in patients {
        let class = if p.record.label == 1 { "sick" } else { "healthy" };
        let dir = root.join(class).join(&p.record.patient_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, t) in p.record.thermograms.iter().enumerate() {
            let path = dir.join(format!("im{}.txt", i + 1));
            let mut text = String::new();
            for row in t.matrix.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                text.push_str(&cells.join(" "));
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        let sidecar = dir.join("params.json");
        let json = serde_json::to_string_pretty(&p.params)?;
        fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slab(
        nx: usize,
        dx: f64,
        layer: TissueLayer,
        bc: BoundaryConditions,
        blood: BloodParams,
    ) -> SimGrid {
        SimGrid {
            dx,
            dy: dx,
            nx,
            ny: 3,
            t: Array2::from_elem((nx, 3), bc.t_core),
            material: Array2::zeros((nx, 3)),
            materials: vec![layer],
            blood,
            bc,
        }
    }

    fn inert_layer(k: f64) -> TissueLayer {
        TissueLayer {
            name: "slab".into(),
            thickness: 0.02,
            specific_heat: 3600.0,
            conductivity: k,
            density: 1000.0,
            perfusion: 0.0,
            metabolic_q: 0.0,
        }
    }

    #[test]
    fn linear_slab_profile() {
        let bc = BoundaryConditions {
            t_core: 37.0,
            surface: SurfaceBc::Dirichlet { t: 30.0 },
        };
        let grid = slab(21, 0.001, inert_layer(0.5), bc, BloodParams::default());
        let out = solve_steady(grid, 1e-9, 2_000_000).unwrap();
        for i in 0..21 {
            let expected = 30.0 + 7.0 * i as f64 / 20.0;
            assert!(
                (out.t[[i, 1]] - expected).abs() < 1e-3,
                "node {i}: {} vs {expected}",
                out.t[[i, 1]]
            );
        }
        // Interpolated midpoint of the 30 → 37 drop.
        assert!((out.t[[10, 1]] - 33.5).abs() < 1e-3);
    }

    #[test]
    fn parabolic_slab_with_uniform_source() {
        let bc = BoundaryConditions {
            t_core: 30.0,
            surface: SurfaceBc::Dirichlet { t: 30.0 },
        };
        let mut layer = inert_layer(0.5);
        layer.metabolic_q = 5000.0;
        let grid = slab(21, 0.001, layer, bc, BloodParams::default());
        let out = solve_steady(grid, 1e-10, 5_000_000).unwrap();
        let (q, k, l) = (5000.0, 0.5, 0.02);
        for i in 0..21 {
            let x = i as f64 * 0.001;
            let expected = 30.0 + q * x * (l - x) / (2.0 * k);
            assert!(
                (out.t[[i, 1]] - expected).abs() < 1e-4,
                "node {i}: {} vs {expected}",
                out.t[[i, 1]]
            );
        }
        // Peak sits at the slab midplane.
        let peak = (0..21).max_by(|&a, &b| out.t[[a, 1]].total_cmp(&out.t[[b, 1]])).unwrap();
        assert_eq!(peak, 10);
    }

    fn perfused_max_error(nx: usize, dx: f64) -> f64 {
        let mut layer = inert_layer(0.5);
        layer.perfusion = 0.01;
        let blood = BloodParams::default();
        let bc = BoundaryConditions {
            t_core: 37.0,
            surface: SurfaceBc::Dirichlet { t: 30.0 },
        };
        let grid = slab(nx, dx, layer.clone(), bc, blood);
        let out = solve_steady(grid, 1e-12, 20_000_000).unwrap();
        let m = (blood.density * blood.specific_heat * layer.perfusion / layer.conductivity)
            .sqrt();
        let l = (nx - 1) as f64 * dx;
        let theta0 = 30.0 - blood.t_arterial;
        (0..nx)
            .map(|i| {
                let x = i as f64 * dx;
                let expected =
                    blood.t_arterial + theta0 * (m * (l - x)).sinh() / (m * l).sinh();
                (out.t[[i, 1]] - expected).abs()
            })
            .fold(0.0f64, f64::max)
    }

    #[test]
    fn perfused_slab_converges_second_order() {
        let coarse = perfused_max_error(11, 0.002);
        let fine = perfused_max_error(21, 0.001);
        let ratio = coarse / fine;
        assert!(
            (3.0..5.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio} ({coarse} -> {fine})"
        );
    }

    #[test]
    fn maximum_principle_without_sources() {
        let bc = BoundaryConditions {
            t_core: 37.0,
            surface: SurfaceBc::Convective { h: 13.5, t_amb: 21.0 },
        };
        let grid = slab(31, 0.001, inert_layer(0.3), bc, BloodParams::default());
        let out = solve_steady(grid, 1e-9, 5_000_000).unwrap();
        for &v in out.t.iter() {
            assert!((21.0..=37.0 + 1e-9).contains(&v), "{v}");
        }
        // Monotone in depth: warmer toward the core.
        for i in 1..31 {
            assert!(out.t[[i, 1]] >= out.t[[i - 1, 1]] - 1e-12);
        }
    }

    #[test]
    fn energy_residual_small_after_convergence() {
        let bc = BoundaryConditions {
            t_core: 37.0,
            surface: SurfaceBc::Dirichlet { t: 30.0 },
        };
        let tol = 1e-9;
        let grid = slab(21, 0.001, inert_layer(0.5), bc, BloodParams::default());
        let out = solve_steady(grid, tol, 2_000_000).unwrap();
        assert!(energy_residual(&out) < 10.0 * tol);
    }

    #[test]
    fn build_grid_standard_layers() {
        let layers = standard_layers();
        let grid = build_grid(
            &layers,
            None,
            BloodParams::default(),
            0.1e-3,
            0.004,
            BoundaryConditions::default(),
        )
        .unwrap();
        // 65 mm total depth at 0.1 mm spacing.
        assert_eq!(grid.nx, 651);
        assert_eq!(grid.ny, 41);
        let distinct: std::collections::BTreeSet<usize> =
            grid.material.iter().copied().collect();
        assert!(distinct.len() <= 6);
        // Surface node is epidermis, deepest node is muscle.
        assert_eq!(grid.materials[grid.material[[0, 0]]].name, "epidermis");
        assert_eq!(
            grid.materials[grid.material[[grid.nx - 1, 0]]].name,
            "muscle"
        );
    }

    #[test]
    fn thin_layers_merge_with_warning() {
        let layers = standard_layers();
        // 1 mm resolution is thicker than the epidermis and both dermis
        // layers, so they must merge rather than vanish.
        let grid = build_grid(
            &layers,
            None,
            BloodParams::default(),
            1e-3,
            0.02,
            BoundaryConditions::default(),
        )
        .unwrap();
        let total: f64 = grid.materials.iter().map(|l| l.thickness).sum();
        assert!((total - 0.065).abs() < 1e-12);
        assert!(grid.materials.len() < layers.len());
    }

    #[test]
    fn tumor_cell_count_matches_area_oracle() {
        let layers = standard_layers();
        let res = 0.5e-3;
        let tumor = TumorSpec::new(0.020, 0.015);
        let grid = build_grid(
            &layers,
            Some(&tumor),
            BloodParams::default(),
            res,
            0.03,
            BoundaryConditions::default(),
        )
        .unwrap();
        let tumor_idx = grid.materials.len() - 1;
        let count = grid.material.iter().filter(|&&m| m == tumor_idx).count();
        let expected = std::f64::consts::PI * (0.005f64).powi(2) / (res * res);
        let rel = (count as f64 - expected).abs() / expected;
        assert!(rel < 0.05, "{count} cells vs {expected} expected");
    }

    #[test]
    fn tumor_outside_soft_tissue_rejected() {
        let layers = standard_layers();
        // Centered 2 mm deep: the 10 mm tumor would poke through the dermis.
        let tumor = TumorSpec::new(0.002, 0.015);
        assert!(build_grid(
            &layers,
            Some(&tumor),
            BloodParams::default(),
            0.5e-3,
            0.03,
            BoundaryConditions::default(),
        )
        .is_err());
    }

    /// Shared fixture: standard layers at 1 mm over a 40 mm wide domain.
    fn solve_breast(tumor: Option<&TumorSpec>) -> SimGrid {
        let grid = build_grid(
            &standard_layers(),
            tumor,
            BloodParams::default(),
            1e-3,
            0.04,
            BoundaryConditions::default(),
        )
        .unwrap();
        solve_steady(grid, 1e-8, 10_000_000).unwrap()
    }

    #[test]
    fn tumor_source_comparison_is_monotone() {
        // Same geometry and materials, tumor metabolic source on vs off:
        // the extra nonnegative source can only warm the field.
        let tumor = TumorSpec::new(0.014, 0.020);
        let with_q = solve_breast(Some(&tumor));
        let mut cold = tumor.clone();
        cold.properties.metabolic_q = 0.0;
        cold.properties.perfusion = 0.0;
        let without_q = solve_breast(Some(&cold));
        for (a, b) in with_q.t.iter().zip(without_q.t.iter()) {
            assert!(a >= &(b - 1e-9));
        }
    }

    #[test]
    fn tumor_raises_surface_temperature_above_it() {
        let tumor = TumorSpec::new(0.014, 0.020);
        let sick = solve_breast(Some(&tumor));
        let healthy = solve_breast(None);
        let col = (0.020 / sick.dy).round() as usize;
        let diff = sick.t[[0, col]] - healthy.t[[0, col]];
        assert!(diff > 0.05, "surface differential {diff} too small");
        assert!(diff < 3.0, "surface differential {diff} implausibly large");

        // Deeper tumor of the same size perturbs the surface less.
        let deep = TumorSpec::new(0.030, 0.020);
        let deep_solved = solve_breast(Some(&deep));
        let deep_diff = deep_solved.t[[0, col]] - healthy.t[[0, col]];
        assert!(deep_diff < diff, "deep {deep_diff} vs shallow {diff}");
    }

    #[test]
    fn synthetic_set_is_balanced_and_deterministic() {
        let patients = generate_synthetic_set(
            3,
            3,
            SynthRanges::default(),
            2e-3,
            (24, 24),
            7,
        )
        .unwrap();
        assert_eq!(patients.len(), 6);
        assert_eq!(patients.iter().filter(|p| p.record.label == 1).count(), 3);
        for p in &patients {
            assert_eq!(p.record.thermograms[0].matrix.dim(), (24, 24));
        }
        let again = generate_synthetic_set(
            3,
            3,
            SynthRanges::default(),
            2e-3,
            (24, 24),
            7,
        )
        .unwrap();
        assert_eq!(patients, again);
    }

    #[test]
    fn synthetic_set_round_trips_through_directory_loader() {
        let patients = generate_synthetic_set(
            2,
            2,
            SynthRanges::default(),
            2e-3,
            (16, 16),
            11,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_set(&patients, dir.path()).unwrap();
        let records = crate::thermal::load_directory(dir.path()).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(records.iter().filter(|r| r.label == 0).count(), 2);
        for r in &records {
            assert_eq!(r.thermograms[0].matrix.dim(), (16, 16));
        }
    }
}

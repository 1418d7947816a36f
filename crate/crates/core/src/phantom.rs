//! Synthetic textured phantoms and reconstruction-kernel simulation.
//!
//! A phantom is a uniform background plus spherical lesions carrying
//! band-limited value-noise texture, plus optional Gaussian voxel noise.
//! Two kernels render each phantom into a paired scan: `Smooth` (per-slice
//! Gaussian blur, homogenizes texture) and `Sharp` (per-slice unsharp mask,
//! raises edge energy). The pair (a = smooth/non-standard, b = sharp/standard)
//! replaces scanner-acquired data end to end.
//!
//! Everything here is a pure function of (spec, seed): per-pair RNG streams
//! are derived from the master seed by index, so serial and parallel dataset
//! generation agree bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{self, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("lesion {index} center {center:?} outside dims {dims:?}")]
    LesionOutside {
        index: usize,
        center: (usize, usize, usize),
        dims: (usize, usize, usize),
    },
    #[error("lesion {0} radius must be >= 1, got {1}")]
    BadRadius(usize, f32),
    #[error("lesion {0} texture scale must be >= 1, got {1}")]
    BadTextureScale(usize, f32),
    #[error("noise sigma must be >= 0, got {0}")]
    BadNoiseSigma(f32),
    #[error("kernel parameter must be positive: {0}")]
    BadKernelParam(&'static str),
    #[error("dataset must contain at least one pair")]
    EmptyDataset,
    #[error("manifest io: {0}")]
    ManifestIo(#[from] std::io::Error),
    #[error("manifest parse: {0}")]
    ManifestParse(#[from] serde_json::Error),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// One spherical lesion: mean shift plus value-noise texture inside a sphere.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Lesion {
    pub center: (usize, usize, usize),
    pub radius_vox: f32,
    pub mean_hu: f32,
    pub texture_amplitude_hu: f32,
    pub texture_scale_vox: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub spacing_mm: (f32, f32, f32),
    pub background_hu: f32,
    pub lesions: Vec<Lesion>,
    pub noise_sigma_hu: f32,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.noise_sigma_hu < 0.0 {
            return Err(PhantomError::BadNoiseSigma(self.noise_sigma_hu));
        }
        for (i, l) in self.lesions.iter().enumerate() {
            if l.radius_vox < 1.0 {
                return Err(PhantomError::BadRadius(i, l.radius_vox));
            }
            if l.texture_scale_vox < 1.0 {
                return Err(PhantomError::BadTextureScale(i, l.texture_scale_vox));
            }
            let (cx, cy, cz) = l.center;
            let (nx, ny, nz) = self.dims;
            if cx >= nx || cy >= ny || cz >= nz {
                return Err(PhantomError::LesionOutside {
                    index: i,
                    center: l.center,
                    dims: self.dims,
                });
            }
        }
        Ok(())
    }
}

/// Reconstruction-kernel simulation acting per axial slice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum KernelSim {
    /// Gaussian blur with the given sigma (voxels).
    Smooth { sigma_vox: f32 },
    /// Unsharp mask `v + amount * (v - blur(v, sigma))`.
    Sharp { amount: f32, sigma_vox: f32 },
}

impl KernelSim {
    pub fn smooth(sigma_vox: f32) -> Result<Self, PhantomError> {
        if sigma_vox <= 0.0 {
            return Err(PhantomError::BadKernelParam("smooth sigma"));
        }
        Ok(Self::Smooth { sigma_vox })
    }

    pub fn sharp(amount: f32, sigma_vox: f32) -> Result<Self, PhantomError> {
        if amount <= 0.0 {
            return Err(PhantomError::BadKernelParam("sharp amount"));
        }
        if sigma_vox <= 0.0 {
            return Err(PhantomError::BadKernelParam("sharp sigma"));
        }
        Ok(Self::Sharp { amount, sigma_vox })
    }

    /// Desk default for the non-standard (smooth) kernel.
    pub fn default_smooth() -> Self {
        Self::Smooth { sigma_vox: 1.5 }
    }

    /// Desk default for the standard (sharp) kernel.
    pub fn default_sharp() -> Self {
        Self::Sharp {
            amount: 1.0,
            sigma_vox: 1.0,
        }
    }
}

/// A (non-standard, standard) rendering of the same underlying phantom.
#[derive(Debug, Clone)]
pub struct PairedScan {
    /// Non-standard image (smooth kernel).
    pub a: Volume,
    /// Standard image (sharp kernel).
    pub b: Volume,
    /// Seed of the underlying phantom.
    pub seed: u64,
    /// Lesions rendered into the phantom; used for evaluation ROIs.
    pub lesions: Vec<Lesion>,
}

// splitmix64; used to derive independent named substreams from one master seed.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic substream seed for (`master`, `tag`).
pub fn sub_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag))
}

fn chacha(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Value noise in [-1, 1]: a random lattice with `scale_vox` spacing,
/// smoothstep-interpolated trilinearly.
struct ValueNoise {
    lattice: Vec<f32>,
    ldims: (usize, usize, usize),
    scale: f32,
}

impl ValueNoise {
    fn new(dims: (usize, usize, usize), scale_vox: f32, rng: &mut ChaCha8Rng) -> Self {
        let ld = (
            (dims.0 as f32 / scale_vox).floor() as usize + 2,
            (dims.1 as f32 / scale_vox).floor() as usize + 2,
            (dims.2 as f32 / scale_vox).floor() as usize + 2,
        );
        let n = ld.0 * ld.1 * ld.2;
        let lattice = (0..n).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
        Self {
            lattice,
            ldims: ld,
            scale: scale_vox,
        }
    }

    #[inline]
    fn lat(&self, x: usize, y: usize, z: usize) -> f32 {
        self.lattice[x + self.ldims.0 * (y + self.ldims.1 * z)]
    }

    fn sample(&self, x: usize, y: usize, z: usize) -> f32 {
        let fade = |t: f32| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let px = x as f32 / self.scale;
        let py = y as f32 / self.scale;
        let pz = z as f32 / self.scale;
        let (ix, iy, iz) = (px as usize, py as usize, pz as usize);
        let (tx, ty, tz) = (fade(px - ix as f32), fade(py - iy as f32), fade(pz - iz as f32));
        let mut acc = 0.0f32;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - tz } else { tz };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - ty } else { ty };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - tx } else { tx };
                    acc += wx * wy * wz * self.lat(ix + dx, iy + dy, iz + dz);
                }
            }
        }
        acc
    }
}

/// Renders a phantom volume. Later lesions overwrite earlier ones where
/// spheres overlap; Gaussian voxel noise is added last.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Volume, PhantomError> {
    spec.validate()?;
    let (nx, ny, nz) = spec.dims;
    let mut v = Volume::filled(spec.dims, spec.spacing_mm, spec.background_hu)?;

    for (li, l) in spec.lesions.iter().enumerate() {
        let mut rng = chacha(sub_seed(seed, 1000 + li as u64));
        let noise = if l.texture_amplitude_hu != 0.0 {
            Some(ValueNoise::new(spec.dims, l.texture_scale_vox, &mut rng))
        } else {
            None
        };
        let r2 = (l.radius_vox as f64) * (l.radius_vox as f64);
        let (cx, cy, cz) = (l.center.0 as f64, l.center.1 as f64, l.center.2 as f64);
        let x0 = (cx - l.radius_vox as f64).floor().max(0.0) as usize;
        let x1 = ((cx + l.radius_vox as f64).ceil() as usize).min(nx - 1);
        let y0 = (cy - l.radius_vox as f64).floor().max(0.0) as usize;
        let y1 = ((cy + l.radius_vox as f64).ceil() as usize).min(ny - 1);
        let z0 = (cz - l.radius_vox as f64).floor().max(0.0) as usize;
        let z1 = ((cz + l.radius_vox as f64).ceil() as usize).min(nz - 1);
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d2 = (x as f64 - cx).powi(2)
                        + (y as f64 - cy).powi(2)
                        + (z as f64 - cz).powi(2);
                    if d2 <= r2 {
                        let tex = noise
                            .as_ref()
                            .map(|n| n.sample(x, y, z) * l.texture_amplitude_hu)
                            .unwrap_or(0.0);
                        v.set(x, y, z, l.mean_hu + tex);
                    }
                }
            }
        }
    }

    if spec.noise_sigma_hu > 0.0 {
        let mut rng = chacha(sub_seed(seed, 1));
        for vox in v.voxels_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *vox += spec.noise_sigma_hu * n as f32;
        }
    }
    Ok(v)
}

fn reflect(i: isize, n: usize) -> usize {
    // Mirror with edge repeat: -1 -> 0, n -> n-1.
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i - 1;
    }
    if i >= n {
        i = 2 * n - 1 - i;
    }
    i as usize
}

fn gaussian_weights(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut w: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}

fn blur_slice(src: &[f32], nx: usize, ny: usize, sigma: f32) -> Vec<f32> {
    let w = gaussian_weights(sigma);
    let radius = (w.len() / 2) as isize;
    let mut tmp = vec![0.0f32; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0f32;
            for (k, &wk) in w.iter().enumerate() {
                let sx = reflect(x as isize + k as isize - radius, nx);
                acc += wk * src[sx + nx * y];
            }
            tmp[x + nx * y] = acc;
        }
    }
    let mut out = vec![0.0f32; nx * ny];
    for y in 0..ny {
        for x in 0..nx {
            let mut acc = 0.0f32;
            for (k, &wk) in w.iter().enumerate() {
                let sy = reflect(y as isize + k as isize - radius, ny);
                acc += wk * tmp[x + nx * sy];
            }
            out[x + nx * y] = acc;
        }
    }
    out
}

/// Applies a kernel per axial slice; dims and spacing are preserved.
pub fn simulate_kernel(v: &Volume, k: &KernelSim) -> Volume {
    let (nx, ny, nz) = v.dims();
    let mut out = Vec::with_capacity(v.len());
    for z in 0..nz {
        let src = v.slice(z);
        match *k {
            KernelSim::Smooth { sigma_vox } => {
                out.extend_from_slice(&blur_slice(src, nx, ny, sigma_vox));
            }
            KernelSim::Sharp { amount, sigma_vox } => {
                let blurred = blur_slice(src, nx, ny, sigma_vox);
                out.extend(
                    src.iter()
                        .zip(blurred.iter())
                        .map(|(&s, &b)| s + amount * (s - b)),
                );
            }
        }
    }
    Volume::from_parts(v.dims(), v.spacing_mm(), out)
        .expect("kernel output preserves dims and finiteness")
}

/// Ranges from which `make_paired_dataset` draws randomized phantoms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomTemplate {
    pub dims: (usize, usize, usize),
    pub spacing_mm: (f32, f32, f32),
    pub background_hu: f32,
    pub lesion_count: (usize, usize),
    pub radius_vox: (f32, f32),
    pub mean_hu: (f32, f32),
    pub texture_amplitude_hu: (f32, f32),
    pub texture_scale_vox: (f32, f32),
    pub noise_sigma_hu: f32,
}

impl Default for PhantomTemplate {
    fn default() -> Self {
        Self {
            dims: (64, 64, 4),
            spacing_mm: (1.0, 1.0, 1.0),
            background_hu: -800.0,
            lesion_count: (1, 2),
            radius_vox: (10.0, 18.0),
            mean_hu: (0.0, 80.0),
            texture_amplitude_hu: (30.0, 70.0),
            texture_scale_vox: (1.5, 4.0),
            noise_sigma_hu: 5.0,
        }
    }
}

impl PhantomTemplate {
    /// Draws one concrete spec. Lesion centers keep the sphere inside the
    /// x/y extent; in z the sphere may be clipped (thin volumes).
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> PhantomSpec {
        let (nx, ny, nz) = self.dims;
        let n_lesions = rng.random_range(self.lesion_count.0..=self.lesion_count.1);
        let mut lesions = Vec::with_capacity(n_lesions);
        for _ in 0..n_lesions {
            let radius = rng.random_range(self.radius_vox.0..=self.radius_vox.1);
            let m = radius.ceil() as usize + 1;
            let cx = rng.random_range(m.min(nx - 1)..=(nx - 1).saturating_sub(m).max(m.min(nx - 1)));
            let cy = rng.random_range(m.min(ny - 1)..=(ny - 1).saturating_sub(m).max(m.min(ny - 1)));
            let cz = rng.random_range(0..nz);
            lesions.push(Lesion {
                center: (cx, cy, cz),
                radius_vox: radius,
                mean_hu: rng.random_range(self.mean_hu.0..=self.mean_hu.1),
                texture_amplitude_hu: rng
                    .random_range(self.texture_amplitude_hu.0..=self.texture_amplitude_hu.1),
                texture_scale_vox: rng
                    .random_range(self.texture_scale_vox.0..=self.texture_scale_vox.1),
            });
        }
        PhantomSpec {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            background_hu: self.background_hu,
            lesions,
            noise_sigma_hu: self.noise_sigma_hu,
        }
    }
}

/// Generates `n` paired scans. Pair `i` uses a substream derived from
/// (`seed`, `i`), so regeneration of any subset is reproducible.
pub fn make_paired_dataset(
    n: usize,
    template: &PhantomTemplate,
    k_smooth: &KernelSim,
    k_sharp: &KernelSim,
    seed: u64,
) -> Result<Vec<PairedScan>, PhantomError> {
    if n == 0 {
        return Err(PhantomError::EmptyDataset);
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let pair_seed = sub_seed(seed, 2000 + i as u64);
            let mut rng = chacha(sub_seed(pair_seed, 0));
            let spec = template.sample(&mut rng);
            let phantom = generate_phantom(&spec, sub_seed(pair_seed, 1))?;
            Ok(PairedScan {
                a: simulate_kernel(&phantom, k_smooth),
                b: simulate_kernel(&phantom, k_sharp),
                seed: pair_seed,
                lesions: spec.lesions,
            })
        })
        .collect()
}

/// Train/eval split tag carried by the dataset manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// Manifest entry for one pair; paths are relative to the manifest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub index: usize,
    pub seed: u64,
    pub a_path: String,
    pub b_path: String,
    pub split: Split,
    pub lesions: Vec<Lesion>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub master_seed: u64,
    pub dims: (usize, usize, usize),
    pub pairs: Vec<PairEntry>,
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PhantomError> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhantomError> {
        let json = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&json)?)
    }

    /// Resolves a pair's volume paths against the manifest's directory.
    pub fn resolve(&self, manifest_path: &Path, entry: &PairEntry) -> (PathBuf, PathBuf) {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        (base.join(&entry.a_path), base.join(&entry.b_path))
    }
}

/// Renders + saves a full dataset under `dir` and writes `manifest.json`.
/// The first `ceil(n * (1 - eval_fraction))` pairs are the train split.
pub fn write_dataset(
    dir: &Path,
    n: usize,
    template: &PhantomTemplate,
    k_smooth: &KernelSim,
    k_sharp: &KernelSim,
    seed: u64,
    eval_fraction: f32,
) -> Result<PathBuf, PhantomError> {
    fs::create_dir_all(dir)?;
    let pairs = make_paired_dataset(n, template, k_smooth, k_sharp, seed)?;
    let n_eval = ((n as f32) * eval_fraction).round() as usize;
    let n_train = n - n_eval.min(n);
    let mut entries = Vec::with_capacity(n);
    for (i, p) in pairs.iter().enumerate() {
        let a_path = format!("pair_{i:04}_a.ltdv");
        let b_path = format!("pair_{i:04}_b.ltdv");
        volume::save_volume(&p.a, dir.join(&a_path))?;
        volume::save_volume(&p.b, dir.join(&b_path))?;
        entries.push(PairEntry {
            index: i,
            seed: p.seed,
            a_path,
            b_path,
            split: if i < n_train { Split::Train } else { Split::Eval },
            lesions: p.lesions.clone(),
        });
    }
    let manifest = DatasetManifest {
        master_seed: seed,
        dims: template.dims,
        pairs: entries,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(lesions: Vec<Lesion>, noise: f32) -> PhantomSpec {
        PhantomSpec {
            dims: (24, 24, 4),
            spacing_mm: (1.0, 1.0, 1.0),
            background_hu: -800.0,
            lesions,
            noise_sigma_hu: noise,
        }
    }

    /// Population variance of the 5-point discrete Laplacian over one slice.
    fn laplacian_variance(v: &Volume, z: usize) -> f64 {
        let (nx, ny, _) = v.dims();
        let s = v.slice(z);
        let mut vals = Vec::new();
        for y in 1..ny - 1 {
            for x in 1..nx - 1 {
                let c = s[x + nx * y] as f64;
                let l = 4.0 * c
                    - s[x - 1 + nx * y] as f64
                    - s[x + 1 + nx * y] as f64
                    - s[x + nx * (y - 1)] as f64
                    - s[x + nx * (y + 1)] as f64;
                vals.push(l);
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    }

    fn step_edge_volume() -> Volume {
        let mut v = Volume::filled((24, 24, 1), (1.0, 1.0, 1.0), -800.0).unwrap();
        for y in 0..24 {
            for x in 12..24 {
                v.set(x, y, 0, 100.0);
            }
        }
        v
    }

    #[test]
    fn no_lesions_no_noise_is_uniform() {
        let v = generate_phantom(&small_spec(vec![], 0.0), 7).unwrap();
        assert!(v.voxels().iter().all(|&x| x == -800.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = small_spec(
            vec![Lesion {
                center: (12, 12, 2),
                radius_vox: 6.0,
                mean_hu: 40.0,
                texture_amplitude_hu: 30.0,
                texture_scale_vox: 2.0,
            }],
            5.0,
        );
        let v1 = generate_phantom(&spec, 99).unwrap();
        let v2 = generate_phantom(&spec, 99).unwrap();
        assert_eq!(v1, v2);
        let v3 = generate_phantom(&spec, 100).unwrap();
        assert_ne!(v1, v3);
    }

    #[test]
    fn flat_lesion_hits_exact_values() {
        // radius 8, mean 40, amplitude 0, background -800, no noise:
        // center voxel is exactly 40, corner exactly -800.
        let spec = PhantomSpec {
            dims: (32, 32, 8),
            spacing_mm: (1.0, 1.0, 1.0),
            background_hu: -800.0,
            lesions: vec![Lesion {
                center: (16, 16, 4),
                radius_vox: 8.0,
                mean_hu: 40.0,
                texture_amplitude_hu: 0.0,
                texture_scale_vox: 2.0,
            }],
            noise_sigma_hu: 0.0,
        };
        let v = generate_phantom(&spec, 3).unwrap();
        assert_eq!(v.at(16, 16, 4), 40.0);
        assert_eq!(v.at(0, 0, 0), -800.0);
    }

    #[test]
    fn later_lesion_wins_on_overlap() {
        let mk = |mean| Lesion {
            center: (12, 12, 2),
            radius_vox: 4.0,
            mean_hu: mean,
            texture_amplitude_hu: 0.0,
            texture_scale_vox: 2.0,
        };
        let v = generate_phantom(&small_spec(vec![mk(10.0), mk(70.0)], 0.0), 1).unwrap();
        assert_eq!(v.at(12, 12, 2), 70.0);
    }

    #[test]
    fn lesion_outside_dims_errors() {
        let spec = small_spec(
            vec![Lesion {
                center: (30, 12, 2),
                radius_vox: 2.0,
                mean_hu: 0.0,
                texture_amplitude_hu: 0.0,
                texture_scale_vox: 2.0,
            }],
            0.0,
        );
        assert!(matches!(
            generate_phantom(&spec, 1).unwrap_err(),
            PhantomError::LesionOutside { .. }
        ));
    }

    #[test]
    fn kernels_preserve_constant_volumes() {
        let v = Volume::filled((16, 16, 2), (1.0, 1.0, 1.0), -512.5).unwrap();
        for k in [KernelSim::default_smooth(), KernelSim::default_sharp()] {
            let out = simulate_kernel(&v, &k);
            for &x in out.voxels() {
                assert!((x - -512.5).abs() < 1e-3, "got {x}");
            }
        }
    }

    #[test]
    fn smooth_lowers_laplacian_variance() {
        let v = step_edge_volume();
        let before = laplacian_variance(&v, 0);
        let after = laplacian_variance(&simulate_kernel(&v, &KernelSim::default_smooth()), 0);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn sharp_raises_laplacian_variance() {
        let v = step_edge_volume();
        let before = laplacian_variance(&v, 0);
        let after = laplacian_variance(&simulate_kernel(&v, &KernelSim::default_sharp()), 0);
        assert!(after > before, "{after} !> {before}");
    }

    #[test]
    fn paired_scans_share_phantom_and_differ_by_kernel() {
        let template = PhantomTemplate {
            dims: (32, 32, 4),
            ..PhantomTemplate::default()
        };
        let pairs = make_paired_dataset(
            5,
            &template,
            &KernelSim::default_smooth(),
            &KernelSim::default_sharp(),
            42,
        )
        .unwrap();
        assert_eq!(pairs.len(), 5);
        for p in &pairs {
            assert_eq!(p.a.dims(), p.b.dims());
            assert_eq!(p.a.spacing_mm(), p.b.spacing_mm());
            let mad: f64 = p
                .a
                .voxels()
                .iter()
                .zip(p.b.voxels())
                .map(|(&a, &b)| (a - b).abs() as f64)
                .sum::<f64>()
                / p.a.len() as f64;
            assert!(mad > 0.0, "kernels must diverge on textured phantoms");
        }
        // Determinism across reruns.
        let again = make_paired_dataset(
            5,
            &template,
            &KernelSim::default_smooth(),
            &KernelSim::default_sharp(),
            42,
        )
        .unwrap();
        for (p, q) in pairs.iter().zip(&again) {
            assert_eq!(p.a, q.a);
            assert_eq!(p.b, q.b);
        }
    }

    #[test]
    fn kernel_commutes_with_save_load() {
        let spec = small_spec(
            vec![Lesion {
                center: (12, 12, 2),
                radius_vox: 6.0,
                mean_hu: 40.0,
                texture_amplitude_hu: 40.0,
                texture_scale_vox: 2.0,
            }],
            5.0,
        );
        let v = generate_phantom(&spec, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("orig.ltdv");
        volume::save_volume(&v, &p1).unwrap();
        let k = KernelSim::default_sharp();
        let route_a = simulate_kernel(&volume::load_volume(&p1).unwrap(), &k);
        let direct = simulate_kernel(&v, &k);
        let p2 = dir.path().join("sim.ltdv");
        volume::save_volume(&direct, &p2).unwrap();
        let route_b = volume::load_volume(&p2).unwrap();
        assert_eq!(route_a, route_b);
    }

    #[test]
    fn dataset_write_and_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let template = PhantomTemplate {
            dims: (32, 32, 4),
            ..PhantomTemplate::default()
        };
        let path = write_dataset(
            dir.path(),
            4,
            &template,
            &KernelSim::default_smooth(),
            &KernelSim::default_sharp(),
            7,
            0.5,
        )
        .unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(m.pairs.len(), 4);
        assert_eq!(
            m.pairs.iter().filter(|p| p.split == Split::Train).count(),
            2
        );
        let (a, b) = m.resolve(&path, &m.pairs[0]);
        assert_eq!(volume::load_volume(a).unwrap().dims(), (32, 32, 4));
        assert_eq!(volume::load_volume(b).unwrap().dims(), (32, 32, 4));
    }
}

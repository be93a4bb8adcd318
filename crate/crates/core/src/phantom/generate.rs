use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, Sample};
use crate::error::{Error, Result};
use crate::faithfulness::BinaryMask;
use crate::rng::{stream, SplitMix64};
use crate::tensor::Tensor;

/// Intensity of the soft-tissue thorax ellipse.
pub const THORAX_INTENSITY: f64 = 0.7;
/// Intensity of the lung fields (lesions add the contrast on top).
pub const LUNG_INTENSITY: f64 = 0.2;

const MAX_PLACEMENT_TRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Image height and width.
    pub size: usize,
    pub per_class: usize,
    /// Benign disc radius range in pixels.
    pub benign_radius: (f64, f64),
    /// Malignant base radius range in pixels.
    pub malignant_radius: (f64, f64),
    /// Relative amplitude `a` of the radial perturbation `r0(1 + a sin(fθ + φ))`.
    pub spiculation_amplitude: f64,
    /// Number of spikes `f` around the boundary.
    pub spiculation_frequency: u32,
    /// Lesion-over-lung contrast Δ.
    pub contrast: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 64,
            per_class: 100,
            benign_radius: (3.0, 5.0),
            malignant_radius: (6.0, 10.0),
            spiculation_amplitude: 0.15,
            spiculation_frequency: 7,
            contrast: 0.35,
            noise: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

/// Pixel `(row, col)` is sampled at its centre `(col + 0.5, row + 0.5)`.
fn centre(i: usize) -> f64 {
    i as f64 + 0.5
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if self.size < 8 {
            return Err(Error::config(format!(
                "image size {} is below the minimum of 8",
                self.size
            )));
        }
        if !range_ok(self.benign_radius) || !range_ok(self.malignant_radius) {
            return Err(Error::config("lesion radius ranges must satisfy 0 < lo <= hi"));
        }
        if !(0.0..1.0).contains(&self.spiculation_amplitude) || self.spiculation_frequency == 0 {
            return Err(Error::config(
                "spiculation needs amplitude in [0,1) and a positive frequency",
            ));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::config(format!("contrast {} outside (0,1)", self.contrast)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config(format!(
                "noise sigma {} must be finite and >= 0",
                self.noise
            )));
        }
        let lung = self.lungs()[0];
        let widest = self
            .benign_radius
            .1
            .max(self.malignant_radius.1 * (1.0 + self.spiculation_amplitude));
        if widest >= lung.ax.min(lung.ay) {
            return Err(Error::config(format!(
                "lesion radius up to {widest:.2} px does not fit a lung field of {:.2}×{:.2} px",
                2.0 * lung.ax,
                2.0 * lung.ay
            )));
        }
        Ok(())
    }

    fn thorax(&self) -> Ellipse {
        let s = self.size as f64;
        Ellipse {
            cx: s / 2.0,
            cy: s / 2.0,
            ax: 0.48 * s,
            ay: 0.42 * s,
        }
    }

    fn lungs(&self) -> [Ellipse; 2] {
        let s = self.size as f64;
        let lung = |cx| Ellipse {
            cx,
            cy: s / 2.0,
            ax: 0.20 * s,
            ay: 0.34 * s,
        };
        [lung(s / 2.0 - 0.22 * s), lung(s / 2.0 + 0.22 * s)]
    }

    /// Pixels inside either lung field.
    pub fn lung_field(&self) -> BinaryMask {
        let lungs = self.lungs();
        BinaryMask::from_fn(self.size, self.size, |r, c| {
            lungs.iter().any(|l| l.contains(centre(c), centre(r)))
        })
    }

    /// Noise-free anatomy without a lesion.
    fn background(&self) -> Vec<f64> {
        let (thorax, lungs) = (self.thorax(), self.lungs());
        let n = self.size;
        (0..n * n)
            .map(|i| {
                let (x, y) = (centre(i % n), centre(i / n));
                if lungs.iter().any(|l| l.contains(x, y)) {
                    LUNG_INTENSITY
                } else if thorax.contains(x, y) {
                    THORAX_INTENSITY
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Lesion shape: a disc when `amplitude` is zero, otherwise the spiculated
/// outline `r(θ) = r0(1 + a sin(fθ + φ))`.
struct Lesion {
    x: f64,
    y: f64,
    r0: f64,
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Lesion {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.x, y - self.y);
        let d = dx.hypot(dy);
        let r = self.r0 * (1.0 + self.amplitude * (self.frequency * dy.atan2(dx) + self.phase).sin());
        d <= r
    }

    fn mask(&self, size: usize) -> BinaryMask {
        BinaryMask::from_fn(size, size, |r, c| self.contains(centre(c), centre(r)))
    }
}

fn place_lesion(
    config: &PhantomConfig,
    label: Label,
    lung_field: &BinaryMask,
    rng: &mut SplitMix64,
) -> Result<BinaryMask> {
    let (range, amplitude) = match label {
        Label::Benign => (config.benign_radius, 0.0),
        Label::Malignant => (config.malignant_radius, config.spiculation_amplitude),
        Label::Normal => unreachable!("normal samples carry no lesion"),
    };
    let r0 = if range.0 < range.1 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    };
    let phase = rng.gen_range(0.0..2.0 * PI);
    let lung = config.lungs()[usize::from(rng.gen_bool(0.5))];
    for _ in 0..MAX_PLACEMENT_TRIES {
        let lesion = Lesion {
            x: rng.gen_range(lung.cx - lung.ax..lung.cx + lung.ax),
            y: rng.gen_range(lung.cy - lung.ay..lung.cy + lung.ay),
            r0,
            amplitude,
            frequency: f64::from(config.spiculation_frequency),
            phase,
        };
        let mask = lesion.mask(config.size);
        if !mask.is_empty() && mask.is_subset_of(lung_field)? {
            return Ok(mask);
        }
    }
    Err(Error::config(format!(
        "could not place a {label} lesion of radius {r0:.2} inside a lung field after {MAX_PLACEMENT_TRIES} tries"
    )))
}

fn synthesize(
    config: &PhantomConfig,
    id: u64,
    label: Label,
    seed: u64,
    background: &[f64],
    lung_field: &BinaryMask,
) -> Result<Sample> {
    let mut rng = SplitMix64::derived(seed, &[stream::PHANTOM, id]);
    let n = config.size;
    let mask = match label {
        Label::Normal => BinaryMask::empty(n, n),
        _ => place_lesion(config, label, lung_field, &mut rng)?,
    };
    let mut pixels = background.to_vec();
    for (p, &inside) in pixels.iter_mut().zip(mask.bits()) {
        if inside {
            *p = LUNG_INTENSITY + config.contrast;
        }
    }
    if config.noise > 0.0 {
        let normal = Normal::new(0.0, config.noise).map_err(|e| Error::config(e.to_string()))?;
        for p in &mut pixels {
            *p += normal.sample(&mut rng);
        }
    }
    for p in &mut pixels {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(Sample {
        id,
        label,
        image: Tensor::new([1, n, n], pixels)?,
        mask,
    })
}

/// `per_class` samples of each class, ids assigned class-major (all Normal
/// first). Each sample draws from its own stream derived from `(seed, id)`.
pub fn generate(config: &PhantomConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let background = config.background();
    let lung_field = config.lung_field();
    let mut samples = Vec::with_capacity(3 * config.per_class);
    for label in Label::ALL {
        for j in 0..config.per_class {
            let id = (label.index() * config.per_class + j) as u64;
            samples.push(synthesize(config, id, label, seed, &background, &lung_field)?);
        }
    }
    Dataset::new(config.size, config.size, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(per_class: usize) -> PhantomConfig {
        PhantomConfig {
            per_class,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(4), 5).unwrap();
        assert_eq!(a, generate(&small(4), 5).unwrap());
        assert_ne!(a, generate(&small(4), 6).unwrap());
    }

    #[test]
    fn label_mask_coupling_and_lung_containment() {
        let c = small(20);
        let field = c.lung_field();
        for s in generate(&c, 11).unwrap().samples() {
            assert_eq!(s.mask.is_empty(), s.label == Label::Normal, "sample {}", s.id);
            assert!(s.mask.is_subset_of(&field).unwrap());
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn malignant_masks_are_larger_than_benign() {
        let d = generate(&small(30), 3).unwrap();
        let areas = |l| d.samples().iter().filter(move |s| s.label == l).map(|s| s.mask.count());
        let max_benign = areas(Label::Benign).max().unwrap();
        let min_malignant = areas(Label::Malignant).min().unwrap();
        assert!(min_malignant > max_benign, "{min_malignant} vs {max_benign}");
    }

    #[test]
    fn noise_free_contrast_is_exact() {
        let c = PhantomConfig { noise: 0.0, ..small(3) };
        let field = c.lung_field();
        for s in generate(&c, 2)
            .unwrap()
            .samples()
            .iter()
            .filter(|s| s.label != Label::Normal)
        {
            let (mut inside, mut lung, mut n_in, mut n_lung) = (0.0, 0.0, 0, 0);
            for (i, &v) in s.image.data().iter().enumerate() {
                if s.mask.bits()[i] {
                    inside += v;
                    n_in += 1;
                } else if field.bits()[i] {
                    lung += v;
                    n_lung += 1;
                }
            }
            let diff = inside / n_in as f64 - lung / n_lung as f64;
            assert!((diff - c.contrast).abs() < 1e-12, "{diff}");
        }
    }

    #[test]
    fn oversized_lesions_are_rejected() {
        let c = PhantomConfig {
            malignant_radius: (6.0, 14.0),
            ..small(1)
        };
        assert!(matches!(generate(&c, 0), Err(Error::Config(_))));
        let c = PhantomConfig {
            contrast: 1.5,
            ..small(1)
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}

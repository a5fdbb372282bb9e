use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Parameters of the synthetic blob sequences.
///
/// The blob centre is `frame centre + c(t)` where each axis of `c` obeys
/// `c'' + 2ζω c' + ω² c = 0`, one time unit per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Frames are `size × size`.
    pub size: usize,
    /// Natural angular frequency per axis, radians per frame.
    pub omega: [f64; 2],
    /// Damping ratio shared by both axes.
    pub zeta: f64,
    /// Gaussian blob standard deviation in pixels.
    pub sigma: f64,
    /// Initial offsets are drawn uniformly from `±max_offset` pixels.
    pub max_offset: f64,
    /// Initial velocities are drawn uniformly from `±max_speed` pixels per frame.
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 16,
            omega: [0.3, 0.45],
            zeta: 0.05,
            sigma: 1.5,
            max_offset: 4.0,
            max_speed: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::contract("frame size must be positive"));
        }
        if !(self.sigma > 0.0) || self.zeta < 0.0 || self.omega.iter().any(|w| *w < 0.0) {
            return Err(Error::contract("sigma must be positive; zeta and omega nonnegative"));
        }
        if self.max_offset < 0.0 || self.max_speed < 0.0 {
            return Err(Error::contract("offset and speed ranges must be nonnegative"));
        }
        Ok(())
    }
}

/// Ordered frames of one sequence, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    /// `T × (width·height)`, row-major pixels, intensities in `[0, 1]`.
    pub frames: Tensor,
    pub width: usize,
    pub height: usize,
    /// Ground-truth blob centres `(x, y)` in pixel coordinates, when known.
    pub centers: Vec<[f64; 2]>,
}

impl FrameSequence {
    pub fn new(frames: Tensor, width: usize, height: usize, centers: Vec<[f64; 2]>) -> Result<Self> {
        if frames.cols() != width * height {
            return Err(Error::shape(format!(
                "frames have {} pixels, expected {width}×{height}",
                frames.cols()
            )));
        }
        if !centers.is_empty() && centers.len() != frames.rows() {
            return Err(Error::shape(format!(
                "{} centres for {} frames",
                centers.len(),
                frames.rows()
            )));
        }
        if frames.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract("frame intensities must lie in [0, 1]"));
        }
        Ok(FrameSequence {
            frames,
            width,
            height,
            centers,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.frames.row_slice(t)
    }
}

/// Closed-form displacement of `c'' + 2ζω c' + ω² c = 0` with `c(0) = c0`,
/// `c'(0) = v0`.
pub fn oscillator_offset(omega: f64, zeta: f64, c0: f64, v0: f64, t: f64) -> f64 {
    if omega == 0.0 {
        return c0 + v0 * t;
    }
    if zeta < 1.0 {
        let wd = omega * (1.0 - zeta * zeta).sqrt();
        let decay = (-zeta * omega * t).exp();
        decay * (c0 * (wd * t).cos() + (v0 + zeta * omega * c0) / wd * (wd * t).sin())
    } else if zeta == 1.0 {
        (-omega * t).exp() * (c0 + (v0 + omega * c0) * t)
    } else {
        let root = (zeta * zeta - 1.0).sqrt();
        let r1 = -omega * (zeta - root);
        let r2 = -omega * (zeta + root);
        let a = (v0 - r2 * c0) / (r1 - r2);
        let b = c0 - a;
        a * (r1 * t).exp() + b * (r2 * t).exp()
    }
}

/// Pixel intensities of a unit-height Gaussian blob centred at `center`.
pub fn render_blob(size: usize, sigma: f64, center: [f64; 2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    let s2 = 2.0 * sigma * sigma;
    for row in 0..size {
        for col in 0..size {
            let dx = col as f64 - center[0];
            let dy = row as f64 - center[1];
            out.push((-(dx * dx + dy * dy) / s2).exp());
        }
    }
    out
}

/// Renders `length` frames of a blob driven by the damped oscillator, with
/// the initial offset and velocity drawn from `config.seed`.
pub fn synth_sequence(config: &SynthConfig, length: usize) -> Result<FrameSequence> {
    config.validate()?;
    if length < 2 {
        return Err(Error::contract(format!(
            "a sequence needs at least 2 frames, got {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |range: f64| {
        if range > 0.0 {
            rng.random_range(-range..=range)
        } else {
            0.0
        }
    };
    let c0 = [draw(config.max_offset), draw(config.max_offset)];
    let v0 = [draw(config.max_speed), draw(config.max_speed)];
    let mid = (config.size as f64 - 1.0) / 2.0;

    let mut data = Vec::with_capacity(length * config.size * config.size);
    let mut centers = Vec::with_capacity(length);
    for t in 0..length {
        let time = t as f64;
        let center = [
            mid + oscillator_offset(config.omega[0], config.zeta, c0[0], v0[0], time),
            mid + oscillator_offset(config.omega[1], config.zeta, c0[1], v0[1], time),
        ];
        data.extend(render_blob(config.size, config.sigma, center));
        centers.push(center);
    }
    let frames = Tensor::from_vec(length, config.size * config.size, data)?;
    FrameSequence::new(frames, config.size, config.size, centers)
}

/// `count` sequences with seeds `config.seed, config.seed + 1, …`.
pub fn synth_dataset(config: &SynthConfig, count: usize, length: usize) -> Result<Vec<FrameSequence>> {
    (0..count as u64)
        .map(|i| {
            let cfg = SynthConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            synth_sequence(&cfg, length)
        })
        .collect()
}

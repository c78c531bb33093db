//! Moving-blob video tasks.
//!
//! Every video is a dark background with one 5×5 blob translating across it.
//! Positions and directions come from integer draws; the only floating-point
//! randomness is the optional additive noise.
//!
//! In `direction4`, the right- and left-moving samples with the same index
//! share a track and are exact time reversals of each other, and the
//! vertical samples are their transposes. The blob is transpose-symmetric and
//! moves two pixels per frame, so the frame distribution is the same for
//! every class and only the frame order carries the label.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Blob intensity in quarters: 4 at the centre, 3 on the first ring, 2 on the rim.
pub const BLOB: [[u8; 5]; 5] = [
    [2, 2, 2, 2, 2],
    [2, 3, 3, 3, 2],
    [2, 3, 4, 3, 2],
    [2, 3, 3, 3, 2],
    [2, 2, 2, 2, 2],
];
const SPAN: usize = 5;
const MAX_STEP: usize = 2;
const MAX_MARGIN: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Class = direction of motion (right, left, down, up).
    Direction4,
    /// Class = speed (one or two pixels per frame), random direction.
    Speed2,
    /// Class = blob colour, random direction.
    Appearance4,
    /// Class = direction + 4 · colour, two colours.
    Mixed8,
}

impl TaskKind {
    pub fn n_classes(self) -> usize {
        match self {
            TaskKind::Direction4 | TaskKind::Appearance4 => 4,
            TaskKind::Speed2 => 2,
            TaskKind::Mixed8 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub per_class: usize,
    /// Standard deviation of the zero-mean uniform noise added to every element.
    pub noise: f64,
    pub seed: u64,
}

/// One labelled video `[t, 3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub video: Tensor<T>,
    pub label: usize,
}

const WHITE: [u8; 3] = [1, 1, 1];
const PALETTE: [[u8; 3]; 4] = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]];

struct Motion {
    direction: usize,
    step: usize,
    color: [u8; 3],
}

struct Track {
    start: usize,
    cross: usize,
}

struct Geometry {
    side: usize,
    margin: usize,
    travel: usize,
}

impl SyntheticTask {
    fn geometry(&self) -> Result<Geometry> {
        if self.frames < 2 {
            return Err(Error::Config(format!("tasks need at least 2 frames, got {}", self.frames)));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise level {} is invalid", self.noise)));
        }
        let side = self.height.min(self.width);
        let travel = MAX_STEP * (self.frames - 1) + SPAN;
        if travel > side {
            return Err(Error::Config(format!(
                "a {SPAN}px blob moving {MAX_STEP}px over {} frames needs {travel}px, frame is {}x{}",
                self.frames, self.height, self.width
            )));
        }
        Ok(Geometry {
            side,
            margin: MAX_MARGIN.min((side - travel) / 2),
            travel,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry().map(|_| ())
    }

    pub fn n_classes(&self) -> usize {
        self.kind.n_classes()
    }

    pub fn len(&self) -> usize {
        self.per_class * self.n_classes()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn motion(&self, label: usize, rng: &mut crate::rng::Rng) -> Motion {
        match self.kind {
            TaskKind::Direction4 => Motion {
                direction: label,
                step: MAX_STEP,
                color: WHITE,
            },
            TaskKind::Speed2 => Motion {
                direction: rng.random_range(0..4),
                step: label + 1,
                color: WHITE,
            },
            TaskKind::Appearance4 => Motion {
                direction: rng.random_range(0..4),
                step: MAX_STEP,
                color: PALETTE[label],
            },
            TaskKind::Mixed8 => Motion {
                direction: label % 4,
                step: MAX_STEP,
                color: [WHITE, PALETTE[0]][label / 4],
            },
        }
    }

    fn render<T: Scalar>(&self, track: &Track, motion: &Motion) -> Tensor<T> {
        let (h, w, t) = (self.height, self.width, self.frames);
        let mut video = Tensor::zeros(&[t, 3, h, w]);
        let data = video.data_mut();
        for k in 0..t {
            let progress = if motion.direction % 2 == 0 { k } else { t - 1 - k };
            let along = track.start + motion.step * progress;
            let (y0, x0) = if motion.direction < 2 {
                (track.cross, along)
            } else {
                (along, track.cross)
            };
            for (c, &on) in motion.color.iter().enumerate() {
                if on == 0 {
                    continue;
                }
                let plane = (k * 3 + c) * h * w;
                for (dy, row) in BLOB.iter().enumerate() {
                    for (dx, &level) in row.iter().enumerate() {
                        data[plane + (y0 + dy) * w + x0 + dx] = T::lit(level as f64 / 4.0);
                    }
                }
            }
        }
        video
    }
}

/// Balanced, seed-deterministic sample list ordered by sample index, then class.
pub fn generate<T: Scalar>(task: &SyntheticTask) -> Result<Vec<Sample<T>>> {
    let g = task.geometry()?;
    let mut tracks = rng_for(task.seed, streams::DATA);
    let mut noise = rng_for(task.seed, streams::NOISE);
    let half_width = task.noise * 3f64.sqrt();
    let k = task.n_classes();
    let mut out = Vec::with_capacity(task.len());
    for _ in 0..task.per_class {
        let track = Track {
            start: tracks.random_range(g.margin..=g.side - g.margin - g.travel),
            cross: tracks.random_range(g.margin..=g.side - g.margin - SPAN),
        };
        let mut motion_rng = rng_for(tracks.random(), streams::DATA);
        for label in 0..k {
            let motion = task.motion(label, &mut motion_rng);
            let mut video = task.render::<T>(&track, &motion);
            if half_width > 0.0 {
                for v in video.data_mut() {
                    *v += T::lit(noise.random_range(-half_width..half_width));
                }
            }
            out.push(Sample { video, label });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(kind: TaskKind) -> SyntheticTask {
        SyntheticTask {
            kind,
            frames: 8,
            height: 32,
            width: 32,
            per_class: 50,
            noise: 0.0,
            seed: 3,
        }
    }

    fn frames(v: &Tensor<f64>) -> Vec<Vec<u64>> {
        (0..v.dims()[0])
            .map(|k| v.slice0(k).unwrap().data().iter().map(|x| x.to_bits()).collect())
            .collect()
    }

    #[test]
    fn direction4_is_balanced() {
        let s: Vec<Sample<f64>> = generate(&task(TaskKind::Direction4)).unwrap();
        assert_eq!(s.len(), 200);
        for c in 0..4 {
            assert_eq!(s.iter().filter(|x| x.label == c).count(), 50);
        }
        assert!(s.iter().all(|x| x.video.dims() == [8, 3, 32, 32]));
        assert!(s.iter().flat_map(|x| x.video.data()).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn generation_is_deterministic() {
        let t = task(TaskKind::Mixed8);
        let a: Vec<Sample<f64>> = generate(&t).unwrap();
        let b: Vec<Sample<f64>> = generate(&t).unwrap();
        assert_eq!(a, b);
        let noisy = SyntheticTask { noise: 0.1, ..t };
        assert_eq!(generate::<f64>(&noisy).unwrap(), generate::<f64>(&noisy).unwrap());
    }

    #[test]
    fn left_and_right_share_frame_multisets() {
        let s: Vec<Sample<f64>> = generate(&task(TaskKind::Direction4)).unwrap();
        for n in 0..50 {
            let mut right = frames(&s[4 * n].video);
            let mut left = frames(&s[4 * n + 1].video);
            assert_ne!(right, left, "sample {n} has no temporal signal");
            right.sort();
            left.sort();
            assert_eq!(right, left, "sample {n}");
        }
    }

    #[test]
    fn vertical_samples_are_transposes() {
        let s: Vec<Sample<f64>> = generate(&task(TaskKind::Direction4)).unwrap();
        for n in 0..10 {
            let (right, down) = (&s[4 * n].video, &s[4 * n + 2].video);
            for k in 0..8 {
                for c in 0..3 {
                    for y in 0..32 {
                        for x in 0..32 {
                            assert_eq!(right.at(&[k, c, y, x]), down.at(&[k, c, x, y]));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn appearance_is_visible_in_one_frame() {
        let s: Vec<Sample<f64>> = generate(&task(TaskKind::Appearance4)).unwrap();
        let signature = |v: &Tensor<f64>| {
            let f = v.slice0(0).unwrap();
            (0..3)
                .map(|c| f.slice0(c).unwrap().data().iter().sum::<f64>() > 0.0)
                .collect::<Vec<_>>()
        };
        for x in &s {
            assert_eq!(signature(&x.video), signature(&s[x.label].video));
        }
        let distinct: std::collections::HashSet<_> = s[..4].iter().map(|x| signature(&x.video)).collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn speeds_differ_in_displacement() {
        let s: Vec<Sample<f64>> = generate(&task(TaskKind::Speed2)).unwrap();
        let centroid = |v: &Tensor<f64>, k: usize| {
            let f = v.slice0(k).unwrap();
            let (mut m, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for y in 0..32 {
                for x in 0..32 {
                    let p = f.at(&[0, y, x]);
                    m += p;
                    sx += p * x as f64;
                    sy += p * y as f64;
                }
            }
            (sx / m, sy / m)
        };
        for x in &s {
            let (a, b) = (centroid(&x.video, 0), centroid(&x.video, 7));
            let moved = (a.0 - b.0).abs() + (a.1 - b.1).abs();
            assert!((moved - 7.0 * (x.label + 1) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_level_matches() {
        let t = SyntheticTask {
            noise: 0.2,
            per_class: 5,
            ..task(TaskKind::Direction4)
        };
        let clean: Vec<Sample<f64>> = generate(&SyntheticTask { noise: 0.0, ..t.clone() }).unwrap();
        let noisy: Vec<Sample<f64>> = generate(&t).unwrap();
        let diffs: Vec<f64> = clean
            .iter()
            .zip(&noisy)
            .flat_map(|(a, b)| a.video.data().iter().zip(b.video.data()).map(|(x, y)| y - x))
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.005, "{mean}");
        assert!((sd - 0.2).abs() < 0.005, "{sd}");
    }

    #[test]
    fn oversized_blob_is_a_config_error() {
        let t = SyntheticTask {
            height: 12,
            width: 12,
            ..task(TaskKind::Direction4)
        };
        assert!(matches!(generate::<f64>(&t), Err(Error::Config(_))));
        let small = SyntheticTask {
            frames: 4,
            height: 11,
            width: 11,
            ..t
        };
        assert_eq!(generate::<f64>(&small).unwrap().len(), 200);
    }
}

//! Seeded synthetic scenes standing in for backbone features.
//!
//! A scene is a label mask of axis-aligned rectangles painted over a class-0
//! background (later rectangles overwrite earlier ones) plus a feature map with
//! `channels_per_class` channels per informative class, each holding that class's
//! 0/1 indicator plus Gaussian noise. Classes outside the informative set leave no
//! trace in the features, which is how two "backbones" can see complementary
//! parts of the same scene.

use crate::error::{Error, Result};
use crate::rng::{stream_seed, NormalStream, SeededRng};
use crate::tensorio::{FeatureMap, LabelMask};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub blob_count: usize,
    pub noise_sigma: f64,
    /// `None` makes every class informative.
    pub informative_classes: Option<Vec<usize>>,
    pub channels_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 4,
            blob_count: 12,
            noise_sigma: 0.1,
            informative_classes: None,
            channels_per_class: 2,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Argument("scene dimensions must be positive".into()));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(Error::Argument(format!(
                "num_classes must be in 2..=255, got {}",
                self.num_classes
            )));
        }
        if self.channels_per_class == 0 {
            return Err(Error::Argument(
                "channels_per_class must be at least 1".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Argument(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if let Some(classes) = &self.informative_classes {
            if classes.is_empty() {
                return Err(Error::Argument(
                    "informative_classes must not be empty".into(),
                ));
            }
            if let Some(c) = classes.iter().find(|&&c| c >= self.num_classes) {
                return Err(Error::Argument(format!(
                    "informative class {c} is not in 0..{}",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    fn informative(&self) -> Vec<usize> {
        let mut classes = self
            .informative_classes
            .clone()
            .unwrap_or_else(|| (0..self.num_classes).collect());
        classes.sort_unstable();
        classes.dedup();
        classes
    }
}

fn layout(spec: &SynthSpec) -> LabelMask {
    let (h, w) = (spec.height, spec.width);
    let mut rng = SeededRng::new(stream_seed(spec.seed, "layout", 0));
    let mut data = vec![0u8; h * w];
    for b in 0..spec.blob_count {
        // cycle through the foreground classes so each appears once blob_count >= num_classes - 1
        let class = 1 + b % (spec.num_classes - 1);
        let bh = 1 + rng.below((h / 2).max(1) as u64) as usize;
        let bw = 1 + rng.below((w / 2).max(1) as u64) as usize;
        let y0 = rng.below((h - bh + 1) as u64) as usize;
        let x0 = rng.below((w - bw + 1) as u64) as usize;
        for y in y0..y0 + bh {
            data[y * w + x0..y * w + x0 + bw].fill(class as u8);
        }
    }
    LabelMask::new(h, w, data).expect("layout dimensions")
}

fn indicator_features(
    mask: &LabelMask,
    classes: &[usize],
    channels_per_class: usize,
    sigma: f64,
    noise_seed: u64,
) -> FeatureMap {
    let channels = classes.len() * channels_per_class;
    let mut noise = NormalStream::new(noise_seed);
    let mut data = Vec::with_capacity(mask.data().len() * channels);
    for &label in mask.data() {
        for &c in classes {
            let signal = if label as usize == c { 1.0 } else { 0.0 };
            for _ in 0..channels_per_class {
                data.push((signal + sigma * noise.sample()) as f32);
            }
        }
    }
    FeatureMap::new(mask.height(), mask.width(), channels, data).expect("feature dimensions")
}

pub fn generate_scene(spec: &SynthSpec) -> Result<(LabelMask, FeatureMap)> {
    spec.validate()?;
    let mask = layout(spec);
    let fmap = indicator_features(
        &mask,
        &spec.informative(),
        spec.channels_per_class,
        spec.noise_sigma,
        stream_seed(spec.seed, "noise", 0),
    );
    Ok((mask, fmap))
}

/// One mask and two feature maps: `A` informative for the first half of the
/// classes, `B` for the second half. `informative_classes` in `spec` is ignored.
pub fn generate_complementary_pair(
    spec: &SynthSpec,
) -> Result<(LabelMask, FeatureMap, FeatureMap)> {
    if spec.num_classes < 4 {
        return Err(Error::Argument(format!(
            "complementary pairs need at least 4 classes, got {}",
            spec.num_classes
        )));
    }
    let spec = SynthSpec {
        informative_classes: None,
        ..spec.clone()
    };
    spec.validate()?;
    let (first, second) = complementary_halves(spec.num_classes);
    let mask = layout(&spec);
    let a = indicator_features(
        &mask,
        &first,
        spec.channels_per_class,
        spec.noise_sigma,
        stream_seed(spec.seed, "noise-a", 0),
    );
    let b = indicator_features(
        &mask,
        &second,
        spec.channels_per_class,
        spec.noise_sigma,
        stream_seed(spec.seed, "noise-b", 0),
    );
    Ok((mask, a, b))
}

/// `(0..k/2, k/2..k)`
pub fn complementary_halves(num_classes: usize) -> (Vec<usize>, Vec<usize>) {
    let half = num_classes / 2;
    ((0..half).collect(), (half..num_classes).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_argmax_recovers_mask() {
        let spec = SynthSpec {
            noise_sigma: 0.0,
            channels_per_class: 1,
            ..Default::default()
        };
        let (mask, fmap) = generate_scene(&spec).unwrap();
        for (p, &label) in mask.data().iter().enumerate() {
            let px = &fmap.data()[p * 4..p * 4 + 4];
            let argmax = (0..4).fold(0, |b, c| if px[c] > px[b] { c } else { b });
            assert_eq!(argmax, label as usize);
        }
    }

    #[test]
    fn deterministic_and_seeded() {
        let spec = SynthSpec::default();
        assert_eq!(
            generate_scene(&spec).unwrap(),
            generate_scene(&spec).unwrap()
        );
        let other = generate_scene(&SynthSpec {
            seed: 1,
            ..spec.clone()
        })
        .unwrap();
        assert_ne!(generate_scene(&spec).unwrap().0, other.0);
    }

    #[test]
    fn every_class_present_and_in_range() {
        let (mask, _) = generate_scene(&SynthSpec::default()).unwrap();
        for c in 0..4u8 {
            assert!(mask.data().contains(&c), "class {c} missing");
        }
        assert!(mask.data().iter().all(|&v| v < 4));
    }

    #[test]
    fn uninformative_classes_carry_no_signal() {
        let spec = SynthSpec {
            height: 96,
            width: 96,
            informative_classes: Some(vec![0, 1]),
            noise_sigma: 0.5,
            ..Default::default()
        };
        let (mask, fmap) = generate_scene(&spec).unwrap();
        assert_eq!(fmap.channels(), 4);
        for class in [2u8, 3] {
            let mut sums = vec![0.0f64; 4];
            let mut n = 0usize;
            for (p, &l) in mask.data().iter().enumerate() {
                if l == class {
                    n += 1;
                    for (s, v) in sums.iter_mut().zip(&fmap.data()[p * 4..p * 4 + 4]) {
                        *s += *v as f64;
                    }
                }
            }
            assert!(n > 100);
            // standard error of the mean is 0.5/sqrt(n); allow five of them
            for s in sums {
                assert!(
                    (s / n as f64).abs() < 5.0 * 0.5 / (n as f64).sqrt(),
                    "class {class}"
                );
            }
        }
    }

    #[test]
    fn complementary_split_rule() {
        assert_eq!(complementary_halves(4), (vec![0, 1], vec![2, 3]));
        let spec = SynthSpec {
            channels_per_class: 3,
            ..Default::default()
        };
        let (mask, a, b) = generate_complementary_pair(&spec).unwrap();
        assert_eq!((a.channels(), b.channels()), (6, 6));
        assert_eq!(mask, generate_scene(&spec).unwrap().0);
        assert!(matches!(
            generate_complementary_pair(&SynthSpec {
                num_classes: 3,
                ..spec
            }),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn invalid_specs() {
        let bad = SynthSpec {
            informative_classes: Some(vec![4]),
            ..Default::default()
        };
        assert!(matches!(generate_scene(&bad), Err(Error::Argument(_))));
        assert!(generate_scene(&SynthSpec {
            height: 0,
            ..Default::default()
        })
        .is_err());
        assert!(generate_scene(&SynthSpec {
            noise_sigma: -1.0,
            ..Default::default()
        })
        .is_err());
    }
}

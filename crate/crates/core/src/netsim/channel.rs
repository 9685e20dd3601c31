use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;

/// Random part of the message delay, added to the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DelayJitter {
    #[default]
    None,
    /// Uniform on `[-half_width, half_width]`; the total is floored at 0.
    Uniform { half_width: f64 },
    /// Exponential with the given mean.
    Exponential { mean: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    /// Mean delay `γ̄`, seconds.
    pub mean_delay: f64,
    pub delay_jitter: DelayJitter,
    pub loss: f64,
    /// Standard deviation of the additive noise on the received time, seconds.
    pub timestamp_noise: f64,
}

impl Default for ChannelModel {
    /// Zero delay and loss, 1 µs timestamp noise.
    fn default() -> Self {
        ChannelModel {
            mean_delay: 0.0,
            delay_jitter: DelayJitter::None,
            loss: 0.0,
            timestamp_noise: 1e-6,
        }
    }
}

/// Outcome for one receiver of a broadcast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Lost,
    Delivered { delay: f64, noise: f64 },
}

impl ChannelModel {
    pub fn noiseless() -> Self {
        ChannelModel {
            timestamp_noise: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.loss) {
            return bad(format!("loss probability must lie in [0, 1], got {}", self.loss));
        }
        if !(self.mean_delay >= 0.0) {
            return bad(format!("mean delay must be non-negative, got {}", self.mean_delay));
        }
        if !(self.timestamp_noise >= 0.0) {
            return bad(format!(
                "timestamp noise must be non-negative, got {}",
                self.timestamp_noise
            ));
        }
        match self.delay_jitter {
            DelayJitter::Uniform { half_width } if !(half_width >= 0.0) => {
                bad(format!("delay jitter half-width must be non-negative, got {half_width}"))
            }
            DelayJitter::Exponential { mean } if !(mean > 0.0) => {
                bad(format!("exponential delay jitter mean must be positive, got {mean}"))
            }
            _ => Ok(()),
        }
    }

    /// Draws loss, then delay, then noise; each draw happens only when the
    /// corresponding parameter is non-zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Link {
        if self.loss > 0.0 && rng.random::<f64>() < self.loss {
            return Link::Lost;
        }
        let jitter = match self.delay_jitter {
            DelayJitter::None => 0.0,
            DelayJitter::Uniform { half_width } if half_width > 0.0 => {
                rng.random_range(-half_width..=half_width)
            }
            DelayJitter::Exponential { mean } => Exp::new(1.0 / mean)
                .expect("validated positive mean")
                .sample(rng),
            DelayJitter::Uniform { .. } => 0.0,
        };
        let noise = if self.timestamp_noise > 0.0 {
            Normal::new(0.0, self.timestamp_noise)
                .expect("validated noise")
                .sample(rng)
        } else {
            0.0
        };
        Link::Delivered {
            delay: (self.mean_delay + jitter).max(0.0),
            noise,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delays_nonnegative_and_loss_rate() {
        let ch = ChannelModel {
            mean_delay: 1e-4,
            delay_jitter: DelayJitter::Uniform { half_width: 5e-4 },
            loss: 0.25,
            timestamp_noise: 1e-6,
        };
        ch.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 40_000;
        let mut lost = 0;
        for _ in 0..n {
            match ch.sample(&mut rng) {
                Link::Lost => lost += 1,
                Link::Delivered { delay, .. } => assert!(delay >= 0.0),
            }
        }
        let p = lost as f64 / n as f64;
        // 4 standard errors
        assert!((p - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / n as f64).sqrt());
    }

    #[test]
    fn invalid_channels() {
        let ch = ChannelModel {
            loss: 1.5,
            ..ChannelModel::default()
        };
        assert!(ch.validate().is_err());
        let ch = ChannelModel {
            delay_jitter: DelayJitter::Exponential { mean: 0.0 },
            ..Default::default()
        };
        assert!(ch.validate().is_err());
    }

    #[test]
    fn noiseless_channel_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            ChannelModel::noiseless().sample(&mut rng),
            Link::Delivered {
                delay: 0.0,
                noise: 0.0
            }
        );
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A one-dimensional search distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dist {
    /// Log-uniform on `[lo, hi]`, rounded to a multiple of `q`.
    QLogUniform { lo: f64, hi: f64, q: f64 },
    /// Uniform on `[lo, hi]`, rounded to a multiple of `q`.
    QUniform { lo: f64, hi: f64, q: f64 },
    Categorical(Vec<f64>),
}

/// Multiples of `q` that lie inside `[lo, hi]`.
fn quantum_range(lo: f64, hi: f64, q: f64) -> (i64, i64) {
    ((lo / q - 1e-9).ceil() as i64, (hi / q + 1e-9).floor() as i64)
}

impl Dist {
    pub fn qlogu(lo: f64, hi: f64, q: f64) -> Self {
        Dist::QLogUniform { lo, hi, q }
    }

    pub fn qu(lo: f64, hi: f64, q: f64) -> Self {
        Dist::QUniform { lo, hi, q }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dist::QLogUniform { lo, hi, q } | Dist::QUniform { lo, hi, q } => {
                let log_ok = !matches!(self, Dist::QLogUniform { .. }) || *lo > 0.0;
                if !(lo <= hi && *q > 0.0 && log_ok) {
                    return Err(Error::Config(format!("invalid search range [{lo}, {hi}] with quantum {q}")));
                }
                let (kmin, kmax) = quantum_range(*lo, *hi, *q);
                if kmin > kmax {
                    return Err(Error::Config(format!("no multiple of {q} in [{lo}, {hi}]")));
                }
                Ok(())
            }
            Dist::Categorical(v) if v.is_empty() => Err(Error::Config("empty categorical choice".into())),
            Dist::Categorical(_) => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::QLogUniform { lo, hi, q } => {
                let x = rng.random_range(lo.ln()..=hi.ln()).exp();
                quantize(x, lo, hi, q)
            }
            Dist::QUniform { lo, hi, q } => quantize(rng.random_range(lo..=hi), lo, hi, q),
            Dist::Categorical(ref v) => v[rng.random_range(0..v.len())],
        }
    }

    /// Whether `v` is a value this distribution can produce.
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Dist::QLogUniform { lo, hi, q } | Dist::QUniform { lo, hi, q } => {
                let (kmin, kmax) = quantum_range(lo, hi, q);
                let k = (v / q).round() as i64;
                (kmin..=kmax).contains(&k) && k as f64 * q == v
            }
            Dist::Categorical(ref c) => c.contains(&v),
        }
    }
}

fn quantize(x: f64, lo: f64, hi: f64, q: f64) -> f64 {
    let (kmin, kmax) = quantum_range(lo, hi, q);
    ((x / q).round() as i64).clamp(kmin, kmax) as f64 * q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: Dist,
    pub dropout: Dist,
    pub batch_size: Dist,
    pub min_distance: Option<Dist>,
}

impl SearchSpace {
    pub fn supervised() -> Self {
        Self {
            learning_rate: Dist::qlogu(1e-4, 1e-1, 5e-5),
            dropout: Dist::qu(0.0, 0.5, 0.1),
            batch_size: Dist::Categorical(vec![64.0, 128.0, 256.0, 512.0]),
            min_distance: None,
        }
    }

    pub fn pretraining() -> Self {
        Self {
            min_distance: Some(Dist::Categorical(vec![1.0, 10.0, 15.0, 30.0])),
            ..Self::supervised()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialParams {
        TrialParams {
            learning_rate: self.learning_rate.sample(rng),
            dropout: self.dropout.sample(rng),
            batch_size: self.batch_size.sample(rng) as usize,
            min_distance: self.min_distance.as_ref().map(|d| d.sample(rng) as usize),
        }
    }

    fn validate(&self) -> Result<()> {
        self.learning_rate.validate()?;
        self.dropout.validate()?;
        self.batch_size.validate()?;
        if let Some(d) = &self.min_distance {
            d.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub learning_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub min_distance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: TrialParams,
    /// Objective value; `None` when the objective failed.
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Samples `trials` configurations and returns the one with the lowest objective.
pub fn random_search<F>(space: &SearchSpace, trials: usize, seed: u64, mut objective: F) -> Result<SearchResult>
where
    F: FnMut(&TrialParams) -> Result<f64>,
{
    if trials < 1 {
        return Err(Error::Config("random search needs at least one trial".into()));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::with_capacity(trials);
    for index in 0..trials {
        let params = space.sample(&mut rng);
        let (objective, error) = match objective(&params) {
            Ok(v) if v.is_finite() => (Some(v), None),
            Ok(v) => (None, Some(format!("objective returned {v}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        log::info!("trial {index}: {params:?} -> {objective:?}");
        log.push(Trial {
            index,
            params,
            objective,
            error,
        });
    }
    let best = log
        .iter()
        .filter(|t| t.objective.is_some())
        .min_by(|a, b| a.objective.partial_cmp(&b.objective).expect("finite objectives"))
        .cloned()
        .ok_or_else(|| Error::Config("every search trial failed".into()))?;
    Ok(SearchResult { best, trials: log })
}
